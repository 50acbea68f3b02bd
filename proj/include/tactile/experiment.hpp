#pragma once

// Experiment runner: one strict run config per experiment kind, fanned out
// over seeds. Every file it writes carries the run's config hash.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "tactile/extract_env.hpp"
#include "tactile/grasp_env.hpp"
#include "tactile/pose.hpp"
#include "tactile/rl.hpp"

namespace tactile::experiment {

enum class Kind { PoseSweep, GraspPPO, ExtractDQN };
std::string to_string(Kind k);
Kind kind_from_string(const std::string& name);

struct GraspBlock {
  grasp::GraspConfig env{};
  rl::PPOConfig ppo{};
  int iterations = 10;
  int average_window = 50;  // episodes in each moving average
};

struct ExtractBlock {
  extract::ExtractConfig env{};
  rl::DQNConfig dqn{};  // scratch runs use its epsilon_decay
  double pretrained_epsilon_decay = 50.0;  // steps; pretrained agents explore less
  rl::PretrainConfig pretrain{};
  int episodes = 300;        // cap per run; a run stops at its first success
  int demos_per_yaw = 3;
  std::uint64_t demo_seed = 0;
  std::vector<double> yaws_deg{0.0, 45.0, 90.0, 135.0};
  std::vector<sim::PegProfile> targets{sim::PegProfile::Vertical, sim::PegProfile::Slanted,
                                       sim::PegProfile::Curved};
  // "scratch" or a peg name
  std::vector<std::string> pretraining{"scratch", "vertical", "slanted", "curved"};
};

struct RunConfig {
  Kind experiment = Kind::GraspPPO;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::filesystem::path output;  // not part of the hash
  pose::SweepConfig pose{};
  GraspBlock grasp{};
  ExtractBlock extract{};

  void validate() const;
};

/// Only the block of the chosen experiment is emitted.
nlohmann::json to_json(const RunConfig& c);
/// Strict: unknown keys, and blocks for another experiment, raise ConfigInvalid.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Hash of to_json(c), which leaves out the output directory.
std::string run_hash(const RunConfig& c);

/// Progress events for live monitoring, e.g. {"experiment","seed","episode",...}.
using MetricsSink = std::function<void(const nlohmann::json&)>;

struct RunReport {
  nlohmann::json summary;                    // also written to summary.json
  std::vector<std::filesystem::path> files;  // everything written, in order
};

/// Throws ConfigInvalid, EnvFailure (with the seed and episode in the message).
RunReport run_experiment(const RunConfig& c, const MetricsSink& sink = {});

/// Scripted teleoperation sessions for every pretraining peg, written to
/// dir/demos/<peg>/<peg>_yaw<deg>_<k>.jsonl. Returns the files in order.
std::vector<std::filesystem::path> write_scripted_demos(const ExtractBlock& e, const std::filesystem::path& dir);
/// Every demo file under dir, sorted by path, scaled for training. Throws
/// HashMismatch for files recorded under another env config.
std::vector<rl::DemoRecord> load_demo_dir(const std::filesystem::path& dir, const extract::ExtractConfig& env);

/// Mean of `steps` over episodes [from, from + n).
double moving_average_steps(const std::vector<rl::EpisodeRecord>& rows, std::size_t from, std::size_t n);
/// 1-based episode of the first success, or cap + 1 when none.
int episodes_to_first_success(const std::vector<bool>& successes, int cap);
double median(std::vector<double> v);

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Pass/fail of the experiment-level claims a summary supports.
std::vector<Check> check_summary(const nlohmann::json& summary);

/// Re-reads a run directory, verifying the hash of every artifact against
/// summary.json. Returns the summary. Throws HashMismatch.
nlohmann::json verify_run(const std::filesystem::path& dir);

}  // namespace tactile::experiment
