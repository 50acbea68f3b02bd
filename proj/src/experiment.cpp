#include "tactile/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::experiment {

using nlohmann::json;
namespace fs = std::filesystem;
namespace jf = json_fields;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::PoseSweep: return "pose_sweep";
    case Kind::GraspPPO: return "grasp_ppo";
    case Kind::ExtractDQN: return "extract_dqn";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& name) {
  if (name == "pose_sweep") return Kind::PoseSweep;
  if (name == "grasp_ppo") return Kind::GraspPPO;
  if (name == "extract_dqn") return Kind::ExtractDQN;
  throw ConfigInvalid("unknown experiment '" + name + "'");
}

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigInvalid("seeds must not be empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigInvalid("seeds must be distinct");
  }
  switch (experiment) {
    case Kind::PoseSweep: pose.validate(); break;
    case Kind::GraspPPO:
      grasp.env.validate();
      grasp.ppo.validate();
      if (grasp.iterations < 1) throw ConfigInvalid("grasp.iterations must be >= 1");
      if (grasp.average_window < 1) throw ConfigInvalid("grasp.average_window must be >= 1");
      break;
    case Kind::ExtractDQN:
      extract.env.validate();
      extract.dqn.validate();
      extract.pretrain.validate();
      if (extract.episodes < 1) throw ConfigInvalid("extract.episodes must be >= 1");
      if (!(extract.pretrained_epsilon_decay > 0)) throw ConfigInvalid("extract.pretrained_epsilon_decay must be > 0");
      if (extract.demos_per_yaw < 1) throw ConfigInvalid("extract.demos_per_yaw must be >= 1");
      if (extract.yaws_deg.empty() || extract.targets.empty() || extract.pretraining.empty()) {
        throw ConfigInvalid("extract: yaws_deg, targets and pretraining must not be empty");
      }
      for (const auto& p : extract.pretraining) {
        if (p == "scratch") continue;
        try {
          sim::peg_profile_from_string(p);
        } catch (const Error&) {
          throw ConfigInvalid("extract.pretraining: unknown entry '" + p + "'");
        }
      }
      break;
  }
}

json to_json(const RunConfig& c) {
  json j{{"experiment", to_string(c.experiment)}, {"seeds", c.seeds}};
  switch (c.experiment) {
    case Kind::PoseSweep: j["pose"] = pose::to_json(c.pose); break;
    case Kind::GraspPPO:
      j["grasp"] = {{"env", grasp::to_json(c.grasp.env)},
                    {"ppo", rl::to_json(c.grasp.ppo)},
                    {"iterations", c.grasp.iterations},
                    {"average_window", c.grasp.average_window}};
      break;
    case Kind::ExtractDQN: {
      json targets = json::array();
      for (auto p : c.extract.targets) targets.push_back(sim::to_string(p));
      j["extract"] = {{"env", extract::to_json(c.extract.env)},
                      {"dqn", rl::to_json(c.extract.dqn)},
                      {"pretrained_epsilon_decay", c.extract.pretrained_epsilon_decay},
                      {"pretrain", rl::to_json(c.extract.pretrain)},
                      {"episodes", c.extract.episodes},
                      {"demos_per_yaw", c.extract.demos_per_yaw},
                      {"demo_seed", c.extract.demo_seed},
                      {"yaws_deg", c.extract.yaws_deg},
                      {"targets", targets},
                      {"pretraining", c.extract.pretraining}};
      break;
    }
  }
  return j;
}

RunConfig run_config_from_json(const json& j) {
  jf::reject_unknown(j, {"experiment", "seeds", "output", "pose", "grasp", "extract"}, "run");
  RunConfig c;
  if (!j.contains("experiment")) throw ConfigInvalid("run.experiment is required");
  std::string kind;
  jf::read(j, "experiment", kind, "run");
  c.experiment = kind_from_string(kind);
  jf::read(j, "seeds", c.seeds, "run");
  if (j.contains("output")) {
    std::string out;
    jf::read(j, "output", out, "run");
    c.output = out;
  }
  const std::map<Kind, const char*> block{
      {Kind::PoseSweep, "pose"}, {Kind::GraspPPO, "grasp"}, {Kind::ExtractDQN, "extract"}};
  for (const auto& [k, name] : block) {
    if (k != c.experiment && j.contains(name)) {
      throw ConfigInvalid(std::string("block '") + name + "' does not apply to " + kind);
    }
  }
  if (j.contains("pose")) c.pose = pose::sweep_config_from_json(j["pose"]);
  if (j.contains("grasp")) {
    const auto& g = j["grasp"];
    jf::reject_unknown(g, {"env", "ppo", "iterations", "average_window"}, "grasp");
    if (g.contains("env")) c.grasp.env = grasp::grasp_config_from_json(g["env"]);
    if (g.contains("ppo")) c.grasp.ppo = rl::ppo_config_from_json(g["ppo"]);
    jf::read(g, "iterations", c.grasp.iterations, "grasp");
    jf::read(g, "average_window", c.grasp.average_window, "grasp");
  }
  if (j.contains("extract")) {
    const auto& e = j["extract"];
    jf::reject_unknown(e,
                       {"env", "dqn", "pretrained_epsilon_decay", "pretrain", "episodes", "demos_per_yaw", "demo_seed", "yaws_deg", "targets",
                        "pretraining"},
                       "extract");
    if (e.contains("env")) c.extract.env = extract::extract_config_from_json(e["env"]);
    if (e.contains("dqn")) c.extract.dqn = rl::dqn_config_from_json(e["dqn"]);
    if (e.contains("pretrain")) c.extract.pretrain = rl::pretrain_config_from_json(e["pretrain"]);
    jf::read(e, "pretrained_epsilon_decay", c.extract.pretrained_epsilon_decay, "extract");
    jf::read(e, "episodes", c.extract.episodes, "extract");
    jf::read(e, "demos_per_yaw", c.extract.demos_per_yaw, "extract");
    jf::read(e, "demo_seed", c.extract.demo_seed, "extract");
    jf::read(e, "yaws_deg", c.extract.yaws_deg, "extract");
    jf::read(e, "pretraining", c.extract.pretraining, "extract");
    if (e.contains("targets")) {
      std::vector<std::string> names;
      jf::read(e, "targets", names, "extract");
      c.extract.targets.clear();
      for (const auto& n : names) {
        try {
          c.extract.targets.push_back(sim::peg_profile_from_string(n));
        } catch (const Error&) {
          throw ConfigInvalid("extract.targets: unknown peg '" + n + "'");
        }
      }
    }
  }
  c.validate();
  return c;
}

std::string run_hash(const RunConfig& c) { return config_hash(to_json(c)); }

double moving_average_steps(const std::vector<rl::EpisodeRecord>& rows, std::size_t from, std::size_t n) {
  if (n == 0 || from + n > rows.size()) throw InvalidArgument("moving average window outside the episodes");
  double s = 0.0;
  for (std::size_t i = from; i < from + n; ++i) s += rows[i].steps;
  return s / static_cast<double>(n);
}

int episodes_to_first_success(const std::vector<bool>& successes, int cap) {
  for (std::size_t i = 0; i < successes.size(); ++i) {
    if (successes[i]) return static_cast<int>(i) + 1;
  }
  return cap + 1;
}

double median(std::vector<double> v) {
  if (v.empty()) throw InvalidArgument("median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<fs::path> write_scripted_demos(const ExtractBlock& e, const fs::path& dir) {
  constexpr double kDeg = kPi / 180.0;
  const std::string env_hash = config_hash(extract::to_json(e.env));
  std::vector<fs::path> files;
  extract::ExtractEnv env(e.env);
  std::set<std::string> done;
  for (const auto& name : e.pretraining) {
    if (name == "scratch" || !done.insert(name).second) continue;
    const auto peg = sim::peg_profile_from_string(name);
    for (std::size_t y = 0; y < e.yaws_deg.size(); ++y) {
      for (int k = 0; k < e.demos_per_yaw; ++k) {
        const fs::path p = dir / "demos" / name / (name + "_yaw" + fmt(e.yaws_deg[y]) + "_" + std::to_string(k) + ".jsonl");
        fs::create_directories(p.parent_path());
        const auto idx = static_cast<std::uint64_t>(y * static_cast<std::size_t>(e.demos_per_yaw) + static_cast<std::size_t>(k));
        extract::record_scripted_demo(env, peg, e.yaws_deg[y] * kDeg, derive_seed(derive_seed(e.demo_seed, name), idx), p,
                                      "scripted");
        if (extract::read_demo_file(p).header.config_hash != env_hash) throw HashMismatch("demo " + p.string());
        files.push_back(p);
      }
    }
  }
  return files;
}

std::vector<rl::DemoRecord> load_demo_dir(const fs::path& dir, const extract::ExtractConfig& env) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  const std::string env_hash = config_hash(extract::to_json(env));
  std::vector<rl::DemoRecord> out;
  for (const auto& p : files) {
    const auto f = extract::read_demo_file(p);
    if (f.header.config_hash != env_hash) throw HashMismatch("demo " + p.string() + " was recorded under another env config");
    const auto scaled = extract::training_demos(f, env);
    out.insert(out.end(), scaled.begin(), scaled.end());
  }
  if (out.empty()) throw InvalidArgument("no demo records under " + dir.string());
  return out;
}

namespace {

std::string seed_tag(std::uint64_t s) { return "seed" + std::to_string(s); }

struct Writer {
  fs::path dir;
  std::string hash;
  RunReport report;

  fs::path path(const fs::path& rel) {
    const fs::path p = dir / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    report.files.push_back(p);
    return p;
  }
  void json_file(const fs::path& rel, json doc) {
    doc["config_hash"] = hash;
    write_json_file(path(rel), doc);
  }
};

// ---------------------------------------------------------------------------

json run_pose(const RunConfig& c, Writer& w, const MetricsSink& sink) {
  std::map<int, std::vector<double>> lstm_mae, lstm_r2, ridge_r2, gap;
  json per_seed = json::array();
  for (std::uint64_t seed : c.seeds) {
    pose::SweepConfig sc = c.pose;
    sc.seed = seed;
    const pose::SweepResult r = pose::run_sweep(sc);
    const fs::path sub = fs::path(seed_tag(seed));
    pose::write_sweep(w.dir / sub, sc, r);
    for (const char* f : {"cells.csv", "table.csv", "summary.json"}) w.report.files.push_back(w.dir / sub / f);
    json rows = json::array();
    for (const auto& row : r.table) {
      json jr{{"window", row.window}, {"lstm_mae", row.lstm.mean.mae}, {"lstm_r2", row.lstm.mean.r2},
              {"failed", row.failed}};
      if (row.lstm.count > 0) {
        lstm_mae[row.window].push_back(row.lstm.mean.mae);
        lstm_r2[row.window].push_back(row.lstm.mean.r2);
      }
      if (row.ridge) {
        jr["ridge_r2"] = row.ridge->mean.r2;
        ridge_r2[row.window].push_back(row.ridge->mean.r2);
        if (row.lstm.count > 0) gap[row.window].push_back(row.lstm.mean.r2 - row.ridge->mean.r2);
      }
      rows.push_back(jr);
    }
    per_seed.push_back({{"seed", seed}, {"windows", rows}});
    if (sink) sink({{"experiment", "pose_sweep"}, {"seed", seed}, {"windows", rows}});
  }
  json windows = json::array();
  for (int W : c.pose.windows) {
    json jw{{"window", W}};
    if (!lstm_mae[W].empty()) {
      jw["lstm_mae"] = median(lstm_mae[W]);
      jw["lstm_r2"] = median(lstm_r2[W]);
    }
    if (!ridge_r2[W].empty()) jw["ridge_r2"] = median(ridge_r2[W]);
    if (!gap[W].empty()) jw["r2_gap"] = median(gap[W]);
    windows.push_back(jw);
  }

  std::ofstream t(w.path("windows.csv"));
  t << csv_hash_line(w.hash) << '\n' << "window,lstm_mae,lstm_r2,ridge_r2,r2_gap\n";
  for (const auto& jw : windows) {
    auto cell = [&](const char* k) { return jw.contains(k) ? fmt(jw[k].get<double>()) : std::string(); };
    t << jw["window"].get<int>() << ',' << cell("lstm_mae") << ',' << cell("lstm_r2") << ',' << cell("ridge_r2") << ','
      << cell("r2_gap") << '\n';
  }
  return {{"per_seed", per_seed}, {"windows", windows}};
}

// ---------------------------------------------------------------------------

json run_grasp(const RunConfig& c, Writer& w, const MetricsSink& sink) {
  const auto n = static_cast<std::size_t>(c.grasp.average_window);
  json runs = json::array();
  std::vector<double> ratios;
  for (std::uint64_t seed : c.seeds) {
    grasp::GraspTask task(c.grasp.env);
    rl::PPOConfig pc = c.grasp.ppo;
    pc.seed = derive_seed(seed, "agent");
    rl::PPOAgent agent(task.observation_width(), task.action_space(), pc);
    rl::PPOTrainResult r;
    try {
      r = rl::train_ppo(task, agent, c.grasp.iterations, derive_seed(seed, "env"), [&](const rl::EpisodeRecord& e) {
        if (sink) {
          sink({{"experiment", "grasp_ppo"},
                {"seed", seed},
                {"episode", e.episode},
                {"steps", e.steps},
                {"reward", e.reward}});
        }
      });
    } catch (const EnvFailure& e) {
      throw EnvFailure(std::string(e.what()) + " (grasp_ppo seed " + std::to_string(seed) + ")");
    }
    rl::write_training_log(w.path("curve_" + seed_tag(seed) + ".csv"), w.hash, r.episodes, "clip_fraction");
    w.json_file("policy_" + seed_tag(seed) + ".json", agent.to_json(w.hash));
    json run{{"seed", seed}, {"episodes", r.episodes.size()}};
    if (r.episodes.size() >= 2 * n) {
      const double first = moving_average_steps(r.episodes, 0, n);
      const double last = moving_average_steps(r.episodes, r.episodes.size() - n, n);
      run["first_average_steps"] = first;
      run["last_average_steps"] = last;
      run["ratio"] = last / first;
      ratios.push_back(last / first);
    }
    std::size_t aborted = 0;
    for (const auto& u : r.updates) aborted += u.aborted;
    run["aborted_updates"] = aborted;
    runs.push_back(run);
  }
  json out{{"runs", runs}, {"average_window", n}};
  if (!ratios.empty()) {
    out["median_ratio"] = median(ratios);
    out["max_ratio"] = *std::max_element(ratios.begin(), ratios.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

json run_extract(const RunConfig& c, Writer& w, const MetricsSink& sink) {
  const ExtractBlock& e = c.extract;
  constexpr double kDeg = kPi / 180.0;
  std::vector<double> yaws;
  for (double d : e.yaws_deg) yaws.push_back(d * kDeg);

  std::map<std::string, std::vector<rl::DemoRecord>> demos;
  for (const auto& p : write_scripted_demos(e, w.dir)) {
    w.report.files.push_back(p);
    const std::string peg = p.parent_path().filename().string();
    const auto scaled = extract::training_demos(extract::read_demo_file(p), e.env);
    demos[peg].insert(demos[peg].end(), scaled.begin(), scaled.end());
  }

  json cells = json::array();
  std::ofstream table(w.path("transfer.csv"));
  table << csv_hash_line(w.hash) << '\n' << "target,pretraining,median_episodes,mean_episodes,runs,solved\n";
  std::map<std::pair<std::string, std::uint64_t>, nn::Network<double>> pretrained;
  for (auto target : e.targets) {
    const std::string tname = sim::to_string(target);
    for (const auto& cond : e.pretraining) {
      std::vector<double> eps;
      json runs = json::array();
      int solved = 0;
      for (std::uint64_t seed : c.seeds) {
        rl::DQNConfig dc = e.dqn;
        dc.seed = derive_seed(seed, "dqn");
        std::optional<rl::DQNAgent> agent;
        if (cond == "scratch") {
          agent.emplace(extract::kObservationWidth, extract::kActionCount, dc);
        } else {
          dc.epsilon_decay = e.pretrained_epsilon_decay;
          auto key = std::make_pair(cond, seed);
          if (!pretrained.count(key)) {
            rl::PretrainConfig pc = e.pretrain;
            pc.seed = derive_seed(seed, "pretrain");
            auto pr = rl::pretrain_from_demos(demos.at(cond), extract::kActionCount, pc);
            w.json_file("pretrained/" + cond + "_" + seed_tag(seed) + ".json", pr.policy.to_json(w.hash));
            pretrained.emplace(key, std::move(pr.policy));
          }
          agent.emplace(rl::q_network_from_policy(pretrained.at(key), extract::kActionCount), dc);
        }
        extract::ExtractTask task(e.env, {target}, yaws);
        std::vector<bool> success;
        auto succeeded = [&](const rl::EpisodeRecord&) {
          return task.env().rise() >= task.env().config().goal_rise();
        };
        std::vector<rl::EpisodeRecord> rows;
        try {
          rows = rl::train_dqn(
              task, *agent, e.episodes, derive_seed(seed, "env"), e.env.max_steps,
              [&](const rl::EpisodeRecord& r) {
                success.push_back(succeeded(r));
                if (sink) {
                  sink({{"experiment", "extract_dqn"},
                        {"target", tname},
                        {"pretraining", cond},
                        {"seed", seed},
                        {"episode", r.episode},
                        {"steps", r.steps},
                        {"reward", r.reward},
                        {"epsilon", r.diagnostic}});
                }
              },
              succeeded);
        } catch (const EnvFailure& ex) {
          throw EnvFailure(std::string(ex.what()) + " (extract_dqn " + tname + "/" + cond + " seed " +
                           std::to_string(seed) + ", episode " + std::to_string(success.size()) + ")");
        }
        rl::write_training_log(w.path("curves/" + tname + "_" + cond + "_" + seed_tag(seed) + ".csv"), w.hash, rows,
                               "epsilon");
        const int first = episodes_to_first_success(success, e.episodes);
        solved += first <= e.episodes;
        eps.push_back(first);
        runs.push_back({{"seed", seed}, {"episodes_to_success", first}});
      }
      const double med = median(eps);
      double mean = 0.0;
      for (double v : eps) mean += v / static_cast<double>(eps.size());
      table << tname << ',' << cond << ',' << fmt(med) << ',' << fmt(mean) << ',' << eps.size() << ',' << solved
            << '\n';
      cells.push_back({{"target", tname},
                       {"pretraining", cond},
                       {"median_episodes", med},
                       {"mean_episodes", mean},
                       {"solved", solved},
                       {"runs", runs}});
    }
  }
  return {{"cells", cells}, {"episode_cap", e.episodes}};
}

}  // namespace

RunReport run_experiment(const RunConfig& c, const MetricsSink& sink) {
  c.validate();
  if (c.output.empty()) throw ConfigInvalid("run.output is required");
  Writer w{c.output, run_hash(c), {}};
  fs::create_directories(w.dir);
  const json cj = to_json(c);
  w.json_file("config.json", {{"config", cj}});
  log::info("running " + to_string(c.experiment) + " (" + w.hash + ") into " + w.dir.string());

  json results;
  switch (c.experiment) {
    case Kind::PoseSweep: results = run_pose(c, w, sink); break;
    case Kind::GraspPPO: results = run_grasp(c, w, sink); break;
    case Kind::ExtractDQN: results = run_extract(c, w, sink); break;
  }
  json summary{{"experiment", to_string(c.experiment)}, {"config", cj}, {"results", results}};
  w.json_file("summary.json", summary);
  summary["config_hash"] = w.hash;
  w.report.summary = summary;
  return std::move(w.report);
}

// ---------------------------------------------------------------------------

std::vector<Check> check_summary(const json& summary) {
  std::vector<Check> out;
  const std::string kind = summary.at("experiment").get<std::string>();
  const json& r = summary.at("results");
  auto num = [](double v) { return fmt(std::round(v * 1e4) / 1e4); };
  if (kind == "pose_sweep") {
    std::map<int, json> by_w;
    for (const auto& jw : r.at("windows")) by_w[jw.at("window").get<int>()] = jw;
    auto has = [&](int W, const char* k) { return by_w.count(W) && by_w[W].contains(k); };
    if (has(40, "r2_gap")) {
      const double g = by_w[40]["r2_gap"].get<double>();
      out.push_back({"lstm beats ridge by 0.05 R2 at W=40", g >= 0.05, "median gap " + num(g)});
    }
    if (has(5, "lstm_mae") && has(20, "lstm_mae") && has(40, "lstm_mae") && has(60, "lstm_mae")) {
      const double m5 = by_w[5]["lstm_mae"], m20 = by_w[20]["lstm_mae"], m40 = by_w[40]["lstm_mae"],
                   m60 = by_w[60]["lstm_mae"];
      out.push_back({"MAE(40) <= MAE(5)", m40 <= m5, num(m40) + " vs " + num(m5)});
      out.push_back({"window gain saturates", std::abs(m60 - m40) < std::abs(m20 - m5),
                     "|60-40| " + num(std::abs(m60 - m40)) + " vs |20-5| " + num(std::abs(m20 - m5))});
    }
  } else if (kind == "grasp_ppo") {
    bool enough = true;
    for (const auto& run : r.at("runs")) enough = enough && run.contains("ratio") && run.at("episodes").get<int>() >= 300;
    out.push_back({"at least 300 episodes per seed", enough, ""});
    if (r.contains("max_ratio")) {
      const double m = r["max_ratio"].get<double>();
      out.push_back({"final steps average <= 60% of initial, every seed", m <= 0.6, "worst ratio " + num(m)});
    }
  } else if (kind == "extract_dqn") {
    std::map<std::pair<std::string, std::string>, double> med;
    for (const auto& cell : r.at("cells")) {
      med[{cell["target"].get<std::string>(), cell["pretraining"].get<std::string>()}] =
          cell["median_episodes"].get<double>();
    }
    const auto scratch = med.find({"vertical", "scratch"});
    if (scratch != med.end()) {
      const auto self = med.find({"vertical", "vertical"});
      if (self != med.end()) {
        out.push_back({"vertical pretraining <= 0.7 x scratch", self->second <= 0.7 * scratch->second,
                       num(self->second) + " vs " + num(scratch->second)});
      }
      const auto curved = med.find({"vertical", "curved"});
      if (curved != med.end()) {
        out.push_back({"curved pretraining does not slow vertical", curved->second <= scratch->second,
                       num(curved->second) + " vs " + num(scratch->second)});
      }
    }
  }
  return out;
}

json verify_run(const fs::path& dir) {
  const json summary = read_json_file(dir / "summary.json");
  const std::string hash = summary.at("config_hash").get<std::string>();
  if (config_hash(summary.at("config")) != hash) throw HashMismatch("summary.json config does not match its hash");
  verify_hash(read_json_file(dir / "config.json"), hash);
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path& p = entry.path();
    std::string expected = hash;
    // Per-seed pose sweeps are stamped with their own sweep config.
    const fs::path rel = fs::relative(p, dir);
    if (std::distance(rel.begin(), rel.end()) > 1 && rel.begin()->string().rfind("seed", 0) == 0) {
      const json sub = read_json_file(p.parent_path() / "summary.json");
      expected = sub.at("config_hash").get<std::string>();
      if (config_hash(sub.at("config")) != expected) throw HashMismatch(p.parent_path().string() + " summary");
    }
    if (p.extension() == ".csv") {
      verify_file_hash(p, expected);
    } else if (p.extension() == ".json") {
      verify_hash(read_json_file(p), expected);
    } else if (p.extension() == ".jsonl") {
      const auto f = extract::read_demo_file(p);
      const auto env = extract::extract_config_from_json(summary["config"]["extract"]["env"]);
      if (f.header.config_hash != config_hash(extract::to_json(env))) throw HashMismatch("demo " + p.string());
    }
  }
  return summary;
}

}  // namespace tactile::experiment
