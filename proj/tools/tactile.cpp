#include <CLI11.hpp>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <thread>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/experiment.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"
#include "tactile/service.hpp"

using namespace tactile;
using nlohmann::json;
namespace fs = std::filesystem;
namespace ex = tactile::experiment;

namespace {

std::atomic<bool> g_stop{false};

ex::RunConfig load_config(const std::string& path, ex::Kind kind) {
  ex::RunConfig c;
  if (path.empty()) {
    c.experiment = kind;
  } else {
    c = ex::run_config_from_json(read_json_file(path));
    if (c.experiment != kind) {
      throw ConfigInvalid(path + " describes a " + ex::to_string(c.experiment) + " run, expected " +
                          ex::to_string(kind));
    }
  }
  return c;
}

fs::path output_dir(const ex::RunConfig& c, const std::string& out) {
  if (!out.empty()) return out;
  if (!c.output.empty()) return c.output;
  return data_root() / "runs" / ex::to_string(c.experiment) / ex::run_hash(c);
}

std::string cell(const json& j, const char* key) {
  if (!j.contains(key)) return "-";
  if (j[key].is_number_float()) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", j[key].get<double>());
    return buf;
  }
  return j[key].dump();
}

void print_results(const json& summary) {
  const std::string kind = summary.at("experiment");
  const json& r = summary.at("results");
  std::printf("%s  config_hash %s\n", kind.c_str(), summary.at("config_hash").get<std::string>().c_str());
  if (kind == "pose_sweep") {
    std::printf("%8s %10s %10s %10s %10s\n", "window", "lstm_mae", "lstm_r2", "ridge_r2", "r2_gap");
    for (const auto& w : r.at("windows")) {
      std::printf("%8s %10s %10s %10s %10s\n", cell(w, "window").c_str(), cell(w, "lstm_mae").c_str(),
                  cell(w, "lstm_r2").c_str(), cell(w, "ridge_r2").c_str(), cell(w, "r2_gap").c_str());
    }
  } else if (kind == "grasp_ppo") {
    std::printf("%6s %9s %10s %10s %8s\n", "seed", "episodes", "first_avg", "last_avg", "ratio");
    for (const auto& run : r.at("runs")) {
      std::printf("%6s %9s %10s %10s %8s\n", cell(run, "seed").c_str(), cell(run, "episodes").c_str(),
                  cell(run, "first_average_steps").c_str(), cell(run, "last_average_steps").c_str(),
                  cell(run, "ratio").c_str());
    }
  } else if (kind == "extract_dqn") {
    std::printf("%-10s %-12s %8s %8s %7s\n", "target", "pretraining", "median", "mean", "solved");
    for (const auto& c : r.at("cells")) {
      std::printf("%-10s %-12s %8s %8s %4s/%zu\n", c.at("target").get<std::string>().c_str(),
                  c.at("pretraining").get<std::string>().c_str(), cell(c, "median_episodes").c_str(),
                  cell(c, "mean_episodes").c_str(), cell(c, "solved").c_str(), c.at("runs").size());
    }
  }
}

// Prints one line per check; returns false if any failed.
bool print_checks(const json& summary) {
  bool ok = true;
  for (const auto& c : ex::check_summary(summary)) {
    std::printf("[%s] %s%s%s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.empty() ? "" : "  ",
                c.detail.c_str());
    ok = ok && c.pass;
  }
  return ok;
}

int run(ex::RunConfig c, const std::string& out, bool check, bool progress) {
  c.output = output_dir(c, out);
  ex::MetricsSink sink;
  if (progress) sink = [](const json& e) { std::cerr << e.dump() << '\n'; };
  const auto report = ex::run_experiment(c, sink);
  print_results(report.summary);
  std::printf("wrote %zu files to %s\n", report.files.size(), c.output.string().c_str());
  const bool ok = print_checks(report.summary);
  return check && !ok ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tactile manipulation workbench"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only warnings and errors on stderr");

  std::string config, out, demos, host = "127.0.0.1", run_config;
  bool check = false, progress = false;
  std::optional<std::uint64_t> seed;
  int port = 8765;
  std::vector<std::string> report_dirs;

  auto add_run_options = [&](CLI::App* sub, bool with_check) {
    sub->add_option("--config", config, "Run config JSON (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory (default: $TACTILE_DATA_ROOT/runs/<experiment>/<hash>)");
    sub->add_flag("--progress", progress, "Print training events to stderr as JSON lines");
    if (with_check) sub->add_flag("--check", check, "Exit with status 1 when an acceptance check fails");
  };

  auto* simgen = app.add_subcommand("simgen", "Generate synthetic data");
  simgen->require_subcommand(1);
  auto* streams = simgen->add_subcommand("streams", "Raw sensor streams of every pose-sweep run, one JSONL per run");
  streams->add_option("--config", config, "pose_sweep run config")->check(CLI::ExistingFile);
  streams->add_option("--seed", seed, "Data seed (default: the config's first seed)");
  streams->add_option("--out", out, "Output directory")->required();

  auto* pose = app.add_subcommand("pose", "Pose estimation");
  pose->require_subcommand(1);
  add_run_options(pose->add_subcommand("sweep", "Window-size sweep, LSTM against ridge"), true);

  auto* grasp = app.add_subcommand("grasp", "Grasp approach");
  grasp->require_subcommand(1);
  add_run_options(grasp->add_subcommand("train", "PPO over every seed"), true);

  auto* extract = app.add_subcommand("extract", "Peg extraction");
  extract->require_subcommand(1);
  auto* ext_demos = extract->add_subcommand("demos", "Scripted teleoperation demos for every pretraining peg");
  ext_demos->add_option("--config", config, "extract_dqn run config")->check(CLI::ExistingFile);
  ext_demos->add_option("--out", out, "Output directory")->required();
  auto* ext_pre = extract->add_subcommand("pretrain", "Behavior cloning from a directory of demos");
  ext_pre->add_option("--config", config, "extract_dqn run config")->check(CLI::ExistingFile);
  ext_pre->add_option("--demos", demos, "Directory searched for *.jsonl demos")->required()->check(CLI::ExistingDirectory);
  ext_pre->add_option("--seed", seed, "Run seed (default: the config's first seed)");
  ext_pre->add_option("--out", out, "Weights JSON")->required();
  add_run_options(extract->add_subcommand("train", "DQN transfer matrix over targets and pretraining"), true);

  auto* serve = app.add_subcommand("serve", "WebSocket endpoint for teleoperation and monitoring");
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--demos", demos, "Where recordings go (default: $TACTILE_DATA_ROOT/demos/live)");
  serve->add_option("--run", run_config, "Run this experiment and stream its metrics")->check(CLI::ExistingFile);
  serve->add_option("--out", out, "Output directory of the --run experiment");

  auto* report = app.add_subcommand("report", "Verify run directories and print their tables");
  report->add_option("dirs", report_dirs, "Run directories")->required()->check(CLI::ExistingDirectory);
  report->add_flag("--check", check, "Exit with status 1 when an acceptance check fails");

  CLI11_PARSE(app, argc, argv);
  if (quiet) {
    log::set_sink([](log::Level level, const std::string& m) {
      if (level != log::Level::Info) std::cerr << m << '\n';
    });
  }

  try {
    if (streams->parsed()) {
      auto c = load_config(config, ex::Kind::PoseSweep);
      pose::SweepConfig sc = c.pose;
      sc.seed = seed.value_or(c.seeds.front());
      const auto files = pose::write_dataset_streams(sc, out);
      write_json_file(fs::path(out) / "sweep_config.json",
                      {{"config", pose::to_json(sc)}, {"config_hash", config_hash(pose::to_json(sc))}});
      std::printf("wrote %zu stream files to %s\n", files.size(), out.c_str());
      return 0;
    }
    if (pose->parsed()) return run(load_config(config, ex::Kind::PoseSweep), out, check, progress);
    if (grasp->parsed()) return run(load_config(config, ex::Kind::GraspPPO), out, check, progress);
    if (ext_demos->parsed()) {
      const auto c = load_config(config, ex::Kind::ExtractDQN);
      const auto files = ex::write_scripted_demos(c.extract, out);
      std::printf("wrote %zu demo files to %s\n", files.size(), (fs::path(out) / "demos").c_str());
      return 0;
    }
    if (ext_pre->parsed()) {
      const auto c = load_config(config, ex::Kind::ExtractDQN);
      const auto records = ex::load_demo_dir(demos, c.extract.env);
      rl::PretrainConfig pc = c.extract.pretrain;
      pc.seed = derive_seed(seed.value_or(c.seeds.front()), "pretrain");
      const auto r = rl::pretrain_from_demos(records, extract::kActionCount, pc);
      const std::string hash = config_hash(json{{"pretrain", rl::to_json(pc)}, {"env", extract::to_json(c.extract.env)}});
      write_json_file(out, r.policy.to_json(hash));
      std::printf("%zu records, final loss %.4f, accuracy %.3f, wrote %s\n", records.size(), r.loss.back(),
                  r.accuracy, out.c_str());
      return 0;
    }
    if (extract->parsed()) return run(load_config(config, ex::Kind::ExtractDQN), out, check, progress);
    if (serve->parsed()) {
      service::Hub::Options opts;
      if (!demos.empty()) opts.demo_dir = demos;
      std::optional<ex::RunConfig> rc;
      if (!run_config.empty()) {
        rc = ex::run_config_from_json(read_json_file(run_config));
        rc->output = output_dir(*rc, out);
        if (rc->experiment == ex::Kind::ExtractDQN) opts.env = rc->extract.env;
      }
      service::Hub hub(opts);
      service::Server server(hub, static_cast<std::uint16_t>(port), host);
      server.start();
      std::printf("listening on ws://%s:%u/\n", host.c_str(), server.port());
      std::fflush(stdout);
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      std::thread trainer;
      if (rc) {
        trainer = std::thread([&] {
          try {
            ex::run_experiment(*rc, [&](const json& e) { server.publish_metrics(e); });
            log::info("run finished; results in " + rc->output.string());
          } catch (const std::exception& e) {
            log::warn(std::string("run failed: ") + e.what());
          }
        });
      }
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
      // A training run is not interruptible; wait for it so its files are complete.
      if (trainer.joinable()) trainer.join();
      return 0;
    }
    if (report->parsed()) {
      bool ok = true;
      for (const auto& d : report_dirs) {
        const json summary = ex::verify_run(d);
        std::printf("%s: all artifacts match their config hash\n", d.c_str());
        print_results(summary);
        ok = print_checks(summary) && ok;
        std::printf("\n");
      }
      return check && !ok ? 1 : 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
