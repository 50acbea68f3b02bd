#pragma once

// In-hand angle estimation from windows of tactile rows: synthetic dataset
// generation, LSTM training per (window, split, seed) cell, ridge and linear
// baselines on flattened windows, and the window-size sweep table.

#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "tactile/learning.hpp"
#include "tactile/sensors.hpp"
#include "tactile/sim_world.hpp"

namespace tactile::pose {

struct SweepConfig {
  std::vector<int> windows{5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60};
  int folds = 4;
  int seeds = 6;                // model iterations per split
  bool last_split_only = false; // desk runs: validate on the final fold only
  std::vector<double> diameters{sim::kReplicationDiameters.begin(), sim::kReplicationDiameters.end()};
  int runs_per_object = 5;
  double run_duration = 20.0;   // s
  std::uint64_t seed = 1;
  std::vector<int> lstm_units{64, 32};
  std::vector<int> dense_units{32, 16};
  nn::TrainConfig train{};
  double ridge_lambda = 1.0;
  int workers = 0;              // 0: one per hardware thread
  sensors::StreamConfig streams{};
  sim::TrialPhysics physics{};

  /// Throws ConfigInvalid.
  void validate() const;
};

nlohmann::json to_json(const SweepConfig& c);
SweepConfig sweep_config_from_json(const nlohmann::json& j);

/// Rows of every run, pooled over diameters. Runs are numbered in recording
/// order (run r of every diameter before run r+1), which is also the time
/// order used by the rolling folds.
struct Dataset {
  sensors::RowTable rows;
  std::vector<double> run_diameter;
};

Dataset generate_dataset(const SweepConfig& c);

/// Raw multi-rate streams of each run, in recording order. generate_dataset
/// aligns and flattens exactly these.
void for_each_run_streams(const SweepConfig& c,
                          const std::function<void(int run, double diameter, const sensors::StreamSet&)>& fn);

/// One JSONL file per run under dir (run<r>_d<mm>.jsonl), each opening with a
/// header line carrying the run, diameter and sweep config hash.
std::vector<std::filesystem::path> write_dataset_streams(const SweepConfig& c, const std::filesystem::path& dir);
/// Rebuilds the dataset from files written by write_dataset_streams.
/// Throws HashMismatch when a file was written under another config.
Dataset read_dataset_streams(const SweepConfig& c, const std::vector<std::filesystem::path>& files);

/// Windows, standardized rows and split indices for one (window, split).
struct SplitData {
  sensors::WindowDataset windows;
  Eigen::MatrixXd Xs;  // rows standardized with training statistics only
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  double target_mean = 0.0;
  double target_std = 1.0;
};

/// Validation windows that share rows with any training window are dropped,
/// so every validation row lies strictly after every training row.
SplitData prepare_split(const sensors::RowTable& rows, int window, int folds, int split);

nn::NetworkSpec estimator_spec(const SweepConfig& c, std::uint64_t seed);

nn::SequenceData<float> to_sequences(const SplitData& d, const std::vector<std::size_t>& idx);
/// (n x W*20) flattened windows.
Eigen::MatrixXd flatten_windows(const SplitData& d, const std::vector<std::size_t>& idx);

struct CellResult {
  int window = 0;
  int split = 0;
  int seed_index = 0;
  bool failed = false;
  std::string error;
  nn::MetricsReport metrics;
  int best_epoch = -1;
};

CellResult train_cell(const SplitData& d, const SweepConfig& c, int split, int seed_index);

struct BaselineResult {
  int window = 0;
  int split = 0;
  std::optional<nn::MetricsReport> ridge;
  std::optional<nn::MetricsReport> linear;  // absent when the design is singular
};

BaselineResult compare_baselines(const SplitData& d, double lambda, int window, int split);

struct WindowRow {
  int window = 0;
  nn::MetricSummary lstm;
  std::size_t failed = 0;
  std::optional<nn::MetricSummary> ridge;
  std::optional<nn::MetricSummary> linear;
};

struct SweepResult {
  std::vector<CellResult> cells;       // sorted by (window, split, seed)
  std::vector<BaselineResult> baselines;
  std::vector<WindowRow> table;        // one row per window size
};

/// Cells run on a thread pool; the merged result does not depend on the
/// execution order.
SweepResult run_sweep(const SweepConfig& c);
SweepResult run_sweep(const SweepConfig& c, const Dataset& data);

/// Writes cells.csv, table.csv and summary.json (all hash-stamped).
void write_sweep(const std::filesystem::path& dir, const SweepConfig& c, const SweepResult& r);

}  // namespace tactile::pose
