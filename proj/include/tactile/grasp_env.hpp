#pragma once

// Grasp-approach refinement: a cuboid sits at a known y but an uncertain x.
// Each step moves the x estimate by a bounded increment, descends, closes the
// gripper and rewards the tactile outcome of that attempt.

#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <random>
#include <string>
#include <vector>

#include "tactile/rl.hpp"
#include "tactile/sim_world.hpp"

namespace tactile::grasp {

inline constexpr int kObservationWidth = 9;  // efforts 4, baro 2, orientation 3
inline constexpr double kSuccessReward = 0.5;
inline constexpr double kFailureReward = -0.1;

struct GraspConfig {
  sim::WorldConfig world{};
  Vec3 object_size{0.03, 0.03, 0.06};
  double object_x = 0.0;       // true position along the uncertain axis
  double object_y = 0.17;
  double mu = 0.0;             // mean of the position estimate
  double sigma = 0.005;
  double step = 0.005;         // m per unit action
  double orient = 1.0;         // projection of the action onto x
  double x_range = 0.12;      // estimates are kept within object_x ± x_range
  int max_steps = 50;
  double baro_threshold = 50.0;
  double tilt_threshold = 5.0 * kPi / 180.0;
  double closed_gap = 0.022;   // commanded inner gap after closing
  double hover_clearance = 0.02;
  double landing_depth = 0.001;  // open pad overlap that counts as landing on the object
  double lift_height = 0.02;
  double object_mass = 0.05;   // kg
  double friction = 0.5;
  bool terminate_on_collision = false;

  void validate() const;
};

nlohmann::json to_json(const GraspConfig& c);
GraspConfig grasp_config_from_json(const nlohmann::json& j);

enum class RewardCase { Collision, NoContact, OneSided, Slipped, Grasped };
std::string to_string(RewardCase c);

struct RewardOutcome {
  double reward = kFailureReward;
  RewardCase kind = RewardCase::NoContact;
};

/// Collision is checked first, then contact count, then the lift.
/// `orientation_delta` holds each module's rotation angle away from its mount.
RewardOutcome compute_reward(const sim::ModulePair& sensors,
                             const std::array<double, 2>& orientation_delta, bool lift_stable,
                             double baro_threshold, double tilt_threshold);

/// Noise-free outcome of one approach at x.
struct Attempt {
  double x = 0.0;
  bool landed = false;        // an open pad came down on the object
  bool lift_stable = false;
  sim::WorldState world;      // contact state the observation is read from
  std::array<double, 2> tilt{};
  RewardOutcome outcome;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  RewardCase kind = RewardCase::NoContact;
};

class GraspEnv {
 public:
  explicit GraspEnv(GraspConfig config = {});

  std::vector<double> reset(std::uint64_t seed);
  std::vector<double> reset(double mu, double sigma, std::uint64_t seed);
  /// Actions outside [-1, 1] are clamped with a warning. Throws EpisodeDone.
  StepResult step(double action);

  Attempt attempt(double x) const;

  /// Fixed per-feature divisors bringing observations to order one.
  static std::array<double, kObservationWidth> observation_scale();

  const GraspConfig& config() const { return config_; }
  double position() const { return p_; }
  double initial_position() const { return p0_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  double last_reward() const { return last_reward_; }
  double total_reward() const { return total_reward_; }
  const sim::WorldState& world() const { return world_; }

 private:
  double clamp_x(double x) const;
  sim::ManipulatorState tool_at(double x, double z, double opening) const;
  std::vector<double> observe(const sim::WorldState& w, const std::array<double, 2>& tilt);

  GraspConfig config_;
  sim::ObjectSpec object_;
  sim::Pose object_pose_;
  sim::WorldState world_;
  std::mt19937_64 noise_;
  double p_ = 0.0;
  double p0_ = 0.0;
  int steps_ = 0;
  bool done_ = true;
  double last_reward_ = 0.0;
  double total_reward_ = 0.0;
};

/// rl::Environment view for PPO: one continuous action in [-1, 1] and
/// observations divided by GraspEnv::observation_scale().
class GraspTask : public rl::Environment {
 public:
  explicit GraspTask(GraspConfig config = {}) : env_(std::move(config)) {}
  int observation_width() const override { return kObservationWidth; }
  rl::ActionSpace action_space() const override { return {false, 1, -1.0, 1.0}; }
  std::vector<double> reset(std::uint64_t seed) override;
  rl::EnvStep step(const std::vector<double>& action) override;
  GraspEnv& env() { return env_; }

  static std::vector<double> scale(std::vector<double> obs);

 private:
  GraspEnv env_;
};

struct EpisodeLogRow {
  int episode = 0;
  int steps = 0;
  double total_reward = 0.0;
};

/// CSV: hash line, then episode,steps,total_reward.
void write_episode_log(const std::filesystem::path& path, const std::string& config_hash,
                       const std::vector<EpisodeLogRow>& rows);

}  // namespace tactile::grasp
