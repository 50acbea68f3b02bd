#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/log.hpp"
#include "tactile/pose.hpp"

using namespace tactile;
using namespace tactile::pose;

namespace {

SweepConfig tiny() {
  SweepConfig c;
  c.windows = {5};
  c.folds = 2;
  c.seeds = 1;
  c.runs_per_object = 2;
  c.run_duration = 3.0;
  c.lstm_units = {4};
  c.dense_units = {};
  c.train.epochs = 1;
  c.workers = 1;
  return c;
}

const Dataset& tiny_data() {
  static const Dataset d = generate_dataset(tiny());
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct QuietLog {
  log::Sink prev = log::set_sink([](log::Level, const std::string&) {});
  ~QuietLog() { log::set_sink(prev); }
};

}  // namespace

TEST_CASE("sweep config is strict") {
  const SweepConfig c;
  CHECK(c.windows.front() == 5);
  CHECK(c.windows.back() == 60);
  CHECK(c.windows.size() == 12);
  CHECK(c.folds == 4);
  CHECK(c.seeds == 6);
  CHECK(c.runs_per_object == 5);
  auto back = sweep_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(sweep_config_from_json({{"windows", {20, 10}}}), ConfigInvalid);
  CHECK_THROWS_AS(sweep_config_from_json({{"windows", {0, 10}}}), ConfigInvalid);
  CHECK_THROWS_AS(sweep_config_from_json({{"window", {5}}}), ConfigInvalid);
  CHECK_THROWS_AS(sweep_config_from_json({{"train", {{"epochs", 0}}}}), ConfigInvalid);
  CHECK_THROWS_AS(sweep_config_from_json({{"physics", {{"speed", 1}}}}), ConfigInvalid);
}

TEST_CASE("dataset pools every diameter in recording order") {
  const auto& d = tiny_data();
  REQUIRE(d.run_diameter.size() == 6);
  CHECK(std::set<double>(d.run_diameter.begin(), d.run_diameter.end()).size() == 3);
  CHECK(d.run_diameter[0] == 0.057);
  CHECK(d.run_diameter[1] == 0.065);
  CHECK(d.run_diameter[2] == 0.080);
  CHECK(d.run_diameter[3] == 0.057);
  for (std::size_t i = 1; i < d.rows.rows(); ++i) CHECK(d.rows.run[i] >= d.rows.run[i - 1]);
}

TEST_CASE("validation rows lie strictly after training rows") {
  const auto& d = tiny_data();
  for (int W : {1, 5, 30}) {
    for (int folds : {2, 4}) {
      for (int s = 1; s < folds; ++s) {
        CAPTURE(W);
        CAPTURE(s);
        const SplitData sd = prepare_split(d.rows, W, folds, s);
        std::size_t last_train = 0, first_val = d.rows.rows();
        for (std::size_t i : sd.train) last_train = std::max(last_train, sd.windows.end[i]);
        for (std::size_t i : sd.validation) {
          first_val = std::min(first_val, sd.windows.end[i] + 1 - static_cast<std::size_t>(W));
        }
        CHECK(first_val > last_train);
        // Standardization statistics come from the training rows only.
        const auto rows = sensors::rows_covered(sd.windows, sd.train);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(sensors::kFeatures);
        for (std::size_t r : rows) mean += sd.Xs.row(static_cast<Eigen::Index>(r)).transpose();
        mean /= static_cast<double>(rows.size());
        CHECK(mean.cwiseAbs().maxCoeff() < 1e-9);
      }
    }
  }
}

TEST_CASE("sequences and flattened windows hold the same rows") {
  const SplitData sd = prepare_split(tiny_data().rows, 7, 2, 1);
  const std::vector<std::size_t> idx{sd.train[3], sd.validation[0], sd.validation.back()};
  const auto seq = to_sequences(sd, idx);
  const Eigen::MatrixXd flat = flatten_windows(sd, idx);
  REQUIRE(seq.x.size() == 7);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto e = static_cast<Eigen::Index>(sd.windows.end[idx[k]]);
    for (int t = 0; t < 7; ++t) {
      for (int f = 0; f < sensors::kFeatures; ++f) {
        CHECK(seq.x[t](f, static_cast<Eigen::Index>(k)) == static_cast<float>(sd.Xs(e - 6 + t, f)));
        CHECK(flat(static_cast<Eigen::Index>(k), t * sensors::kFeatures + f) == sd.Xs(e - 6 + t, f));
      }
    }
    const double target = seq.y(0, static_cast<Eigen::Index>(k)) * sd.target_std + sd.target_mean;
    CHECK(target == doctest::Approx(sd.windows.target[idx[k]]).epsilon(1e-5));
  }
}

TEST_CASE("ridge with zero lambda equals the linear baseline") {
  const SplitData sd = prepare_split(tiny_data().rows, 3, 2, 1);
  const auto b = compare_baselines(sd, 0.0, 3, 1);
  REQUIRE(b.linear);
  CHECK(std::abs(b.ridge->mae - b.linear->mae) < 1e-8);
  CHECK(std::abs(b.ridge->r2 - b.linear->r2) < 1e-8);
  const auto b2 = compare_baselines(sd, 10.0, 3, 1);
  CHECK(b2.ridge->mae != b.ridge->mae);
}

TEST_CASE("single window, single split gives one table row") {
  const auto r = run_sweep(tiny(), tiny_data());
  REQUIRE(r.table.size() == 1);
  CHECK(r.table[0].window == 5);
  CHECK(r.table[0].lstm.count == 1);
  CHECK(r.table[0].failed == 0);
  CHECK(r.table[0].ridge);
  CHECK(r.cells.size() == 1);
}

TEST_CASE("sweep cells are independent of execution order") {
  SweepConfig c = tiny();
  c.windows = {2, 4};
  c.seeds = 2;
  c.folds = 3;
  const auto a = run_sweep(c, tiny_data());
  c.workers = 3;
  const auto b = run_sweep(c, tiny_data());
  REQUIRE(a.cells.size() == 8);
  REQUIRE(b.cells.size() == 8);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    CHECK(a.cells[i].window == b.cells[i].window);
    CHECK(a.cells[i].split == b.cells[i].split);
    CHECK(a.cells[i].seed_index == b.cells[i].seed_index);
    CHECK(a.cells[i].metrics.mae == b.cells[i].metrics.mae);
  }
  // A single cell rerun alone matches its sweep value.
  const SplitData sd = prepare_split(tiny_data().rows, 4, 3, 2);
  CHECK(train_cell(sd, c, 2, 1).metrics.mae == a.cells[7].metrics.mae);
}

TEST_CASE("failed cells are marked without aborting the sweep") {
  QuietLog quiet;
  SweepConfig c = tiny();
  c.windows = {5, 1000000};
  const auto r = run_sweep(c, tiny_data());
  REQUIRE(r.table.size() == 2);
  CHECK(r.table[0].failed == 0);
  CHECK(r.table[1].failed == 1);
  CHECK(r.cells.back().failed);
  CHECK_FALSE(r.cells.back().error.empty());
}

TEST_CASE("sweep artifacts are hash-stamped and byte-identical on rerun") {
  const auto dir = std::filesystem::temp_directory_path() / "tactile_test_pose";
  std::filesystem::remove_all(dir);
  const SweepConfig c = tiny();
  write_sweep(dir / "a", c, run_sweep(c, tiny_data()));
  write_sweep(dir / "b", c, run_sweep(c, tiny_data()));
  for (const char* f : {"cells.csv", "table.csv", "summary.json"}) {
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  }
  const std::string hash = config_hash(to_json(c));
  CHECK_NOTHROW(verify_file_hash(dir / "a" / "table.csv", hash));
  CHECK_THROWS_AS(verify_file_hash(dir / "a" / "table.csv", "0000000000000000"), HashMismatch);
  const auto summary = read_json_file(dir / "a" / "summary.json");
  CHECK_NOTHROW(verify_hash(summary, hash));
  CHECK(summary["table"].size() == 1);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stream files rebuild the dataset exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "tactile_pose_streams";
  std::filesystem::remove_all(dir);
  const auto files = write_dataset_streams(tiny(), dir);
  CHECK(files.size() == tiny().diameters.size() * 2);
  // Reversed input order: the header's run number decides the order.
  const Dataset d = read_dataset_streams(tiny(), {files.rbegin(), files.rend()});
  CHECK(d.rows.X == tiny_data().rows.X);
  CHECK(d.rows.angle == tiny_data().rows.angle);
  CHECK(d.rows.frame_end == tiny_data().rows.frame_end);
  CHECK(d.rows.run == tiny_data().rows.run);
  CHECK(d.run_diameter == tiny_data().run_diameter);

  SweepConfig other = tiny();
  other.seed = 99;
  CHECK_THROWS_AS(read_dataset_streams(other, files), HashMismatch);
}
