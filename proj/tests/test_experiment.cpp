#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/experiment.hpp"
#include "tactile/log.hpp"

using namespace tactile;
using namespace tactile::experiment;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct QuietLog {
  log::Sink prev = log::set_sink([](log::Level, const std::string&) {});
  ~QuietLog() { log::set_sink(prev); }
};

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "tactile_experiment_test" / name;
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

RunConfig small_grasp(const fs::path& out) {
  RunConfig c;
  c.experiment = Kind::GraspPPO;
  c.output = out;
  c.grasp.iterations = 2;
  c.grasp.ppo.steps_per_iteration = 256;
  c.grasp.ppo.epochs = 2;
  c.grasp.average_window = 5;
  return c;
}

RunConfig small_extract(const fs::path& out) {
  RunConfig c;
  c.experiment = Kind::ExtractDQN;
  c.output = out;
  c.seeds = {0, 1};
  c.extract.episodes = 20;
  c.extract.demos_per_yaw = 1;
  c.extract.yaws_deg = {0.0, 90.0};
  c.extract.targets = {sim::PegProfile::Vertical};
  c.extract.pretraining = {"scratch", "vertical"};
  c.extract.pretrain.epochs = 5;
  return c;
}

}  // namespace

TEST_CASE("median against a sorted-middle oracle") {
  CHECK(median({3.0}) == 3.0);
  CHECK(median({4.0, 1.0, 3.0}) == 3.0);
  CHECK(median({4.0, 1.0, 3.0, 2.0}) == 2.5);
  CHECK(median({7.0, 7.0}) == 7.0);
  CHECK_THROWS(median({}));
}

TEST_CASE("episodes to first success") {
  CHECK(episodes_to_first_success({false, false, true, true}, 10) == 3);
  CHECK(episodes_to_first_success({true}, 10) == 1);
  CHECK(episodes_to_first_success({false, false}, 10) == 11);
  CHECK(episodes_to_first_success({}, 5) == 6);
}

TEST_CASE("moving average of episode steps") {
  std::vector<rl::EpisodeRecord> rows(6);
  for (int i = 0; i < 6; ++i) rows[static_cast<std::size_t>(i)].steps = 10 * (i + 1);
  CHECK(moving_average_steps(rows, 0, 2) == doctest::Approx(15.0));
  CHECK(moving_average_steps(rows, 3, 3) == doctest::Approx(50.0));
  CHECK_THROWS(moving_average_steps(rows, 5, 2));
}

TEST_CASE("run config is strict and round-trips") {
  RunConfig c = small_extract("/tmp/unused");
  const json j = to_json(c);
  CHECK(j.contains("extract"));
  CHECK_FALSE(j.contains("grasp"));
  CHECK_FALSE(j.contains("pose"));
  CHECK_FALSE(j.contains("output"));
  const RunConfig back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(run_hash(back) == run_hash(c));

  // The output directory does not change what was run.
  RunConfig moved = c;
  moved.output = "/elsewhere";
  CHECK(run_hash(moved) == run_hash(c));
  moved.extract.episodes += 1;
  CHECK(run_hash(moved) != run_hash(c));

  auto rejects = [](json bad) {
    try {
      run_config_from_json(bad);
      return false;
    } catch (const Error& e) {
      return std::string(e.kind()) == "ConfigInvalid";
    }
  };
  json extra = j;
  extra["extract"]["episods"] = 3;
  CHECK(rejects(extra));
  json other = j;
  other["grasp"] = json::object();
  CHECK(rejects(other));
  json nokind = j;
  nokind.erase("experiment");
  CHECK(rejects(nokind));
  json badkind = j;
  badkind["experiment"] = "extract";
  CHECK(rejects(badkind));
  json noseeds = j;
  noseeds["seeds"] = json::array();
  CHECK(rejects(noseeds));
  json badpre = j;
  badpre["extract"]["pretraining"] = {"scratch", "square"};
  CHECK(rejects(badpre));
}

TEST_CASE("grasp fan-out writes one curve per seed and reruns byte-identically") {
  QuietLog quiet;
  const auto dir = fresh_dir("grasp_a");
  const RunConfig c = small_grasp(dir);
  std::vector<json> events;
  const auto rep = run_experiment(c, [&](const json& e) { events.push_back(e); });

  for (std::uint64_t s : c.seeds) {
    CHECK(fs::exists(dir / ("curve_seed" + std::to_string(s) + ".csv")));
    CHECK(fs::exists(dir / ("policy_seed" + std::to_string(s) + ".json")));
  }
  const json& runs = rep.summary["results"]["runs"];
  REQUIRE(runs.size() == c.seeds.size());
  std::size_t episodes = 0;
  for (const auto& r : runs) episodes += r["episodes"].get<std::size_t>();
  CHECK(events.size() == episodes);
  CHECK(events.front()["experiment"] == "grasp_ppo");

  const json verified = verify_run(dir);
  CHECK(verified["config_hash"] == run_hash(c));

  RunConfig again = c;
  again.output = fresh_dir("grasp_b");
  const auto rep2 = run_experiment(again);
  REQUIRE(rep.files.size() == rep2.files.size());
  for (std::size_t i = 0; i < rep.files.size(); ++i) {
    INFO(rep.files[i].string());
    CHECK(slurp(rep.files[i]) == slurp(rep2.files[i]));
  }
}

TEST_CASE("a tampered artifact fails verification") {
  QuietLog quiet;
  const auto dir = fresh_dir("grasp_tamper");
  run_experiment(small_grasp(dir));

  const fs::path curve = dir / "curve_seed2.csv";
  std::string text = slurp(curve);
  const auto nl = text.find('\n');
  text.replace(0, nl, csv_hash_line("0000000000000000"));
  std::ofstream(curve, std::ios::binary | std::ios::trunc) << text;
  CHECK_THROWS_AS(verify_run(dir), HashMismatch);

  const auto dir2 = fresh_dir("grasp_tamper_summary");
  run_experiment(small_grasp(dir2));
  json s = read_json_file(dir2 / "summary.json");
  s["config"]["grasp"]["iterations"] = 99;
  write_json_file(dir2 / "summary.json", s);
  CHECK_THROWS_AS(verify_run(dir2), HashMismatch);
}

TEST_CASE("extract run writes demos, pretrained weights, curves and the transfer table") {
  QuietLog quiet;
  const auto dir = fresh_dir("extract");
  const RunConfig c = small_extract(dir);
  const auto rep = run_experiment(c);

  // 2 yaws x 1 demo for the one pretraining peg.
  int demos = 0;
  for (const auto& e : fs::directory_iterator(dir / "demos" / "vertical")) demos += e.path().extension() == ".jsonl";
  CHECK(demos == 2);
  for (std::uint64_t s : c.seeds) {
    CHECK(fs::exists(dir / "pretrained" / ("vertical_seed" + std::to_string(s) + ".json")));
    CHECK(fs::exists(dir / "curves" / ("vertical_scratch_seed" + std::to_string(s) + ".csv")));
    CHECK(fs::exists(dir / "curves" / ("vertical_vertical_seed" + std::to_string(s) + ".csv")));
  }

  std::ifstream t(dir / "transfer.csv");
  std::string hash_line, header, row;
  std::getline(t, hash_line);
  std::getline(t, header);
  CHECK(header == "target,pretraining,median_episodes,mean_episodes,runs,solved");
  int rows = 0;
  while (std::getline(t, row)) ++rows;
  CHECK(rows == 2);

  const json& cells = rep.summary["results"]["cells"];
  REQUIRE(cells.size() == 2);
  for (const auto& cell : cells) {
    std::vector<double> eps;
    for (const auto& r : cell["runs"]) {
      const int n = r["episodes_to_success"];
      CHECK(n >= 1);
      CHECK(n <= c.extract.episodes + 1);
      eps.push_back(n);
    }
    CHECK(cell["median_episodes"].get<double>() == doctest::Approx(median(eps)));
  }
  // A run stops at its first success, so its curve holds exactly that many rows.
  for (const auto& r : cells[0]["runs"]) {
    const int n = r["episodes_to_success"];
    if (n > c.extract.episodes) continue;
    std::ifstream curve(dir / "curves" / ("vertical_scratch_seed" + std::to_string(r["seed"].get<int>()) + ".csv"));
    int lines = 0;
    std::string l;
    while (std::getline(curve, l)) ++lines;
    CHECK(lines == n + 2);
  }

  // Logged epsilon follows the closed form with decay 200 for scratch and 50
  // for pretrained agents.
  for (const auto& [cond, decay] : {std::pair<std::string, double>{"scratch", 200.0}, {"vertical", 50.0}}) {
    std::ifstream curve(dir / "curves" / ("vertical_" + cond + "_seed0.csv"));
    std::string l;
    std::getline(curve, l);
    std::getline(curve, l);
    while (std::getline(curve, l)) {
      std::stringstream ss(l);
      std::string step;
      std::getline(ss, step, ',');
      const double t = std::stod(step);
      const double eps = std::stod(l.substr(l.rfind(',') + 1));
      CHECK(eps == doctest::Approx(0.05 + 0.85 * std::exp(-t / decay)).epsilon(1e-12));
    }
  }

  const auto checks = check_summary(rep.summary);
  CHECK(checks.size() == 1);  // no curved cell, so only the self-transfer claim
  CHECK_NOTHROW(verify_run(dir));
}

TEST_CASE("check_summary reads the claims off a summary") {
  json grasp{{"experiment", "grasp_ppo"},
             {"results",
              {{"runs", {{{"episodes", 320}, {"ratio", 0.2}}, {{"episodes", 310}, {"ratio", 0.5}}}},
               {"max_ratio", 0.5}}}};
  auto checks = check_summary(grasp);
  REQUIRE(checks.size() == 2);
  CHECK(checks[0].pass);
  CHECK(checks[1].pass);
  grasp["results"]["runs"][1]["episodes"] = 250;
  grasp["results"]["max_ratio"] = 0.61;
  checks = check_summary(grasp);
  CHECK_FALSE(checks[0].pass);
  CHECK_FALSE(checks[1].pass);

  auto cell = [](const char* t, const char* p, double m) {
    return json{{"target", t}, {"pretraining", p}, {"median_episodes", m}};
  };
  json ext{{"experiment", "extract_dqn"},
           {"results",
            {{"cells",
              {cell("vertical", "scratch", 10), cell("vertical", "vertical", 7), cell("vertical", "curved", 10)}}}}};
  checks = check_summary(ext);
  REQUIRE(checks.size() == 2);
  CHECK(checks[0].pass);  // 7 <= 0.7 * 10
  CHECK(checks[1].pass);
  ext["results"]["cells"][1]["median_episodes"] = 7.5;
  ext["results"]["cells"][2]["median_episodes"] = 11;
  checks = check_summary(ext);
  CHECK_FALSE(checks[0].pass);
  CHECK_FALSE(checks[1].pass);

  auto win = [](int W, double mae, double gap) { return json{{"window", W}, {"lstm_mae", mae}, {"r2_gap", gap}}; };
  json pose{{"experiment", "pose_sweep"},
            {"results", {{"windows", {win(5, 4.0, 0.0), win(20, 2.0, 0.0), win(40, 1.5, 0.06), win(60, 1.4, 0.0)}}}}};
  checks = check_summary(pose);
  REQUIRE(checks.size() == 3);
  CHECK(checks[0].pass);
  CHECK(checks[1].pass);
  CHECK(checks[2].pass);  // |1.4 - 1.5| < |2 - 4|
  pose["results"]["windows"][2]["r2_gap"] = 0.04;
  pose["results"]["windows"][3]["lstm_mae"] = 4.0;
  checks = check_summary(pose);
  CHECK_FALSE(checks[0].pass);
  CHECK_FALSE(checks[2].pass);
}

TEST_CASE("a small pose run verifies") {
  QuietLog quiet;
  RunConfig c;
  c.experiment = Kind::PoseSweep;
  c.output = fresh_dir("pose");
  c.seeds = {3};
  c.pose.windows = {5, 10};
  c.pose.folds = 2;
  c.pose.seeds = 1;
  c.pose.last_split_only = true;
  c.pose.diameters = {0.057, 0.080};
  c.pose.runs_per_object = 3;
  c.pose.run_duration = 2.0;
  c.pose.lstm_units = {4};
  c.pose.dense_units = {4};
  c.pose.train.epochs = 1;
  const auto rep = run_experiment(c);
  CHECK(fs::exists(c.output / "seed3" / "table.csv"));
  CHECK(fs::exists(c.output / "windows.csv"));
  CHECK(rep.summary["results"]["windows"].size() == 2);
  CHECK_NOTHROW(verify_run(c.output));
}

TEST_CASE("scripted demos load back from their directory") {
  QuietLog quiet;
  const auto dir = fresh_dir("demos");
  ExtractBlock e;
  e.yaws_deg = {0.0, 45.0};
  e.demos_per_yaw = 2;
  e.pretraining = {"scratch", "slanted", "slanted"};
  const auto files = write_scripted_demos(e, dir);
  REQUIRE(files.size() == 4);
  CHECK(files[0] == dir / "demos" / "slanted" / "slanted_yaw0_0.jsonl");
  CHECK(files[3] == dir / "demos" / "slanted" / "slanted_yaw45_1.jsonl");

  std::size_t records = 0;
  for (const auto& f : files) records += extract::read_demo_file(f).records.size();
  const auto demos = load_demo_dir(dir, e.env);
  CHECK(demos.size() == records);

  extract::ExtractConfig other = e.env;
  other.max_steps += 1;
  CHECK_THROWS_AS(load_demo_dir(dir, other), HashMismatch);
  const auto empty = fresh_dir("empty_demos");
  fs::create_directories(empty);
  CHECK_THROWS_AS(load_demo_dir(empty, e.env), InvalidArgument);
}
