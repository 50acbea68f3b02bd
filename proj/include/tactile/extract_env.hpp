#pragma once

// Peg extraction: the gripper holds a peg seated in a clearance-fit hole and
// pulls it out with discrete end-effector motions. Wall contact shows up as
// pad pressure; a motion that would push the peg deeper than the jam limit
// into a wall is rejected.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tactile/rl.hpp"
#include "tactile/sim_world.hpp"

namespace tactile::extract {

// Translations and pitch are in the end-effector frame. The yaw pair turns the
// base, which is the only way this arm can rotate the tool about z.
enum class Action { PlusX, MinusX, PlusZ, MinusZ, PlusRotY, MinusRotY, PlusRotZ, MinusRotZ };
inline constexpr int kActionCount = 8;
inline constexpr int kObservationWidth = 17;  // position 3, quaternion 4, pressure 2, deltas 2x4

/// Key tokens: "+x" "-x" "+z" "-z" "+rotY" "-rotY" "+rotZ" "-rotZ".
std::string to_string(Action a);
Action action_from_token(const std::string& token);

struct ExtractConfig {
  sim::WorldConfig world{};
  sim::PegGeometry peg{};
  double radius = 0.26;
  double mouth_height = 0.04;
  double translation = 0.005;
  double rotation = 5.0 * kPi / 180.0;
  double friction_threshold = 0.5;  // scaled pressure
  double goal_margin = 0.02;        // goal rise = hole depth + margin
  double jam_excess = 0.0025;
  int max_steps = 64;
  double shaping_gain = 10.0;
  double shaping_clip = 0.1;

  void validate() const;
  double goal_rise() const { return peg.hole_depth + goal_margin; }
};

nlohmann::json to_json(const ExtractConfig& c);
ExtractConfig extract_config_from_json(const nlohmann::json& j);

enum class RewardCase { Success, Friction, Shaping };
std::string to_string(RewardCase c);

struct RewardOutcome {
  double reward = 0.0;
  RewardCase kind = RewardCase::Shaping;
};

/// Success (rise at the goal) first, then friction, then 10 * delta_height clipped.
RewardOutcome compute_reward(const std::array<double, 2>& scaled_pressure, double rise,
                             double delta_height, const ExtractConfig& c);

/// Noise-free outcome of one motion from a tool pose.
struct Probe {
  sim::Pose tool;                   // resulting pose (unchanged when rejected)
  std::array<double, 2> pressure{};  // scaled readings at the attempted pose
  bool jammed = false;
  bool workspace_limited = false;
  double rise = 0.0;
  double delta_height = 0.0;
  RewardOutcome outcome;
};

struct ExtractStep {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  RewardCase kind = RewardCase::Shaping;
  bool jammed = false;
  bool workspace_limited = false;
};

struct DemoHeader {
  sim::PegProfile peg = sim::PegProfile::Vertical;
  double yaw_deg = 0.0;
  std::uint64_t seed = 0;
  std::string timestamp;
  std::string config_hash;
};

struct DemoFile {
  DemoHeader header;
  std::vector<rl::DemoRecord> records;
};

/// First line is the header object, then one DemoRecord per line.
DemoFile read_demo_file(const std::filesystem::path& path);

class ExtractEnv {
 public:
  explicit ExtractEnv(ExtractConfig config = {});

  std::vector<double> reset(sim::PegProfile peg, double placement_yaw, std::uint64_t seed);
  /// Throws EpisodeDone.
  ExtractStep step(Action a);

  Probe probe(const sim::Pose& tool, Action a) const;

  /// Opens a session file; its header records the current reset.
  void start_recording(const std::filesystem::path& path, const std::string& timestamp);
  /// Like step, appending (observation before the motion, action) first.
  /// Throws SessionClosed without an open session.
  ExtractStep teleop_step(const std::string& key);
  /// Closes the session and returns its path. Throws SessionClosed.
  std::filesystem::path stop_recording();
  bool recording() const { return session_.is_open(); }

  const ExtractConfig& config() const { return config_; }
  const sim::Pose& tool() const { return tool_; }
  const sim::Pose& seated() const { return seated_; }
  const sim::WorldState& world() const { return world_; }
  const std::vector<double>& observation() const { return obs_; }
  double rise() const;
  int steps() const { return steps_; }
  bool done() const { return done_; }
  sim::PegProfile peg() const { return peg_; }
  double placement_yaw() const { return yaw_; }
  std::uint64_t seed() const { return seed_; }

 private:
  std::optional<sim::JointAngles> reach(const sim::Pose& tool) const;
  sim::ModulePair contact_at(const sim::Pose& tool) const;
  std::vector<double> observe(const sim::ModulePair& m, const std::array<double, 2>& pressure);

  ExtractConfig config_;
  sim::PegProfile peg_ = sim::PegProfile::Vertical;
  double yaw_ = 0.0;
  std::uint64_t seed_ = 0;
  sim::ObjectSpec object_;
  std::optional<sim::PegHole> hole_;
  sim::Pose seated_;
  sim::Pose tool_;
  sim::JointAngles joints_{};
  sim::WorldState world_;
  std::array<Quaternion, 2> prev_modules_{};
  std::vector<double> obs_;
  std::mt19937_64 noise_;
  int steps_ = 0;
  bool done_ = true;
  std::ofstream session_;
  std::filesystem::path session_path_;
};

/// Cheapest noise-free action sequence to the goal from the env's current
/// pose (each step costs 1, a friction step 1 + friction_cost), restricted to
/// `allowed`. Ties break in a seeded order. Empty when the goal is not
/// reachable within the step cap.
std::optional<std::vector<Action>> plan_extraction(const ExtractEnv& env, const std::vector<Action>& allowed,
                                                   double friction_cost, std::uint64_t seed);

/// Records one scripted teleoperation session: reset, plan, replay the plan
/// through teleop_step. Returns the number of recorded steps.
int record_scripted_demo(ExtractEnv& env, sim::PegProfile peg, double placement_yaw, std::uint64_t seed,
                         const std::filesystem::path& path, const std::string& timestamp);

sim::Pose seated_tool(const ExtractConfig& c, sim::PegProfile peg, double placement_yaw);

/// Position relative to the seated tool, x20; the rest unchanged.
std::vector<double> scale_observation(std::vector<double> obs, const Vec3& seated);

/// Demo records with observations scaled as the DQN task sees them.
std::vector<rl::DemoRecord> training_demos(const DemoFile& f, const ExtractConfig& c);

/// rl::Environment view for the DQN agent: discrete actions, fixed
/// observation scaling, peg and yaw per reset drawn from the given lists.
class ExtractTask : public rl::Environment {
 public:
  ExtractTask(ExtractConfig config, std::vector<sim::PegProfile> pegs, std::vector<double> yaws);
  int observation_width() const override { return kObservationWidth; }
  rl::ActionSpace action_space() const override { return {true, kActionCount}; }
  std::vector<double> reset(std::uint64_t seed) override;
  rl::EnvStep step(const std::vector<double>& action) override;
  ExtractEnv& env() { return env_; }
  std::vector<double> scale(std::vector<double> obs) const {
    return scale_observation(std::move(obs), env_.seated().position);
  }

 private:
  ExtractEnv env_;
  std::vector<sim::PegProfile> pegs_;
  std::vector<double> yaws_;
};

}  // namespace tactile::extract
