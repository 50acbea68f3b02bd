#include "tactile/grasp_env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/log.hpp"
#include "tactile/seed.hpp"

namespace tactile::grasp {

using nlohmann::json;

void GraspConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigInvalid(std::string("grasp.") + name + " must be > 0");
  };
  positive(object_size.x, "object_size");
  positive(object_size.y, "object_size");
  positive(object_size.z, "object_size");
  positive(step, "step");
  positive(x_range, "x_range");
  positive(baro_threshold, "baro_threshold");
  positive(tilt_threshold, "tilt_threshold");
  positive(closed_gap, "closed_gap");
  positive(hover_clearance, "hover_clearance");
  positive(landing_depth, "landing_depth");
  positive(lift_height, "lift_height");
  positive(object_mass, "object_mass");
  positive(friction, "friction");
  if (!(sigma >= 0.0)) throw ConfigInvalid("grasp.sigma must be >= 0");
  if (max_steps < 1) throw ConfigInvalid("grasp.max_steps must be >= 1");
  if (closed_gap >= world.gripper.max_opening) {
    throw ConfigInvalid("grasp.closed_gap must be below the gripper opening");
  }
  if (!std::isfinite(mu) || !std::isfinite(orient) || !std::isfinite(object_x) || !std::isfinite(object_y)) {
    throw ConfigInvalid("grasp positions must be finite");
  }
}

json to_json(const GraspConfig& c) {
  return json{{"world", sim::to_json(c.world)},
              {"object_size", {c.object_size.x, c.object_size.y, c.object_size.z}},
              {"object_x", c.object_x},
              {"object_y", c.object_y},
              {"mu", c.mu},
              {"sigma", c.sigma},
              {"step", c.step},
              {"orient", c.orient},
              {"x_range", c.x_range},
              {"max_steps", c.max_steps},
              {"baro_threshold", c.baro_threshold},
              {"tilt_threshold", c.tilt_threshold},
              {"closed_gap", c.closed_gap},
              {"hover_clearance", c.hover_clearance},
              {"landing_depth", c.landing_depth},
              {"lift_height", c.lift_height},
              {"object_mass", c.object_mass},
              {"friction", c.friction},
              {"terminate_on_collision", c.terminate_on_collision}};
}

GraspConfig grasp_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string where = "grasp";
  jf::reject_unknown(j,
                     {"world", "object_size", "object_x", "object_y", "mu", "sigma", "step", "orient", "x_range",
                      "max_steps", "baro_threshold", "tilt_threshold", "closed_gap", "hover_clearance",
                      "landing_depth", "lift_height", "object_mass", "friction", "terminate_on_collision"},
                     where);
  GraspConfig c;
  if (j.contains("world")) c.world = sim::world_config_from_json(j["world"]);
  if (j.contains("object_size")) {
    std::array<double, 3> s{};
    jf::read(j, "object_size", s, where);
    c.object_size = {s[0], s[1], s[2]};
  }
  jf::read(j, "object_x", c.object_x, where);
  jf::read(j, "object_y", c.object_y, where);
  jf::read(j, "mu", c.mu, where);
  jf::read(j, "sigma", c.sigma, where);
  jf::read(j, "step", c.step, where);
  jf::read(j, "orient", c.orient, where);
  jf::read(j, "x_range", c.x_range, where);
  jf::read(j, "max_steps", c.max_steps, where);
  jf::read(j, "baro_threshold", c.baro_threshold, where);
  jf::read(j, "tilt_threshold", c.tilt_threshold, where);
  jf::read(j, "closed_gap", c.closed_gap, where);
  jf::read(j, "hover_clearance", c.hover_clearance, where);
  jf::read(j, "landing_depth", c.landing_depth, where);
  jf::read(j, "lift_height", c.lift_height, where);
  jf::read(j, "object_mass", c.object_mass, where);
  jf::read(j, "friction", c.friction, where);
  jf::read(j, "terminate_on_collision", c.terminate_on_collision, where);
  c.validate();
  return c;
}

std::string to_string(RewardCase c) {
  switch (c) {
    case RewardCase::Collision: return "collision";
    case RewardCase::NoContact: return "no_contact";
    case RewardCase::OneSided: return "one_sided";
    case RewardCase::Slipped: return "slipped";
    case RewardCase::Grasped: return "grasped";
  }
  return "unknown";
}

RewardOutcome compute_reward(const sim::ModulePair& sensors, const std::array<double, 2>& orientation_delta,
                             bool lift_stable, double baro_threshold, double tilt_threshold) {
  if (std::max(orientation_delta[0], orientation_delta[1]) > tilt_threshold) {
    return {kFailureReward, RewardCase::Collision};
  }
  const bool c0 = sensors[0].baro > baro_threshold;
  const bool c1 = sensors[1].baro > baro_threshold;
  if (!c0 && !c1) return {kFailureReward, RewardCase::NoContact};
  if (c0 != c1) return {kFailureReward, RewardCase::OneSided};
  if (!lift_stable) return {kFailureReward, RewardCase::Slipped};
  return {kSuccessReward, RewardCase::Grasped};
}

GraspEnv::GraspEnv(GraspConfig config)
    : config_(std::move(config)), object_(sim::ObjectSpec::cuboid(config_.object_size)) {
  config_.validate();
  object_pose_.position = {config_.object_x, config_.object_y, 0.0};
  world_.object = object_;
  world_.object_pose = object_pose_;
  world_.manipulator = tool_at(config_.mu, config_.object_size.z + config_.hover_clearance,
                               config_.world.gripper.max_opening);
}

sim::ManipulatorState GraspEnv::tool_at(double x, double z, double opening) const {
  const double y = config_.object_y;
  sim::Pose target{{x, y, z}, sim::downward_tool(std::atan2(y, x))};
  const auto q = sim::inverse_kinematics(target, config_.world.arm);
  if (!q) throw EnvFailure("grasp pose at x=" + fmt(x) + " is out of reach");
  return sim::make_manipulator(*q, opening, config_.world.arm);
}

Attempt GraspEnv::attempt(double x) const {
  const auto& g = config_.world.gripper;
  Attempt a;
  a.x = x;
  a.world = world_;
  a.world.object_pose = object_pose_;
  const double z_grasp = 0.5 * config_.object_size.z;

  // Descend open; a pad overlapping the object stops on its top face.
  a.world.manipulator = tool_at(x, z_grasp, g.max_opening);
  sim::ModulePair open = sim::compute_contact(a.world, config_.world);
  a.landed = std::any_of(open.begin(), open.end(), [&](const sim::TactileModuleState& m) {
    return m.in_contact && m.depth > config_.landing_depth;
  });
  if (a.landed) {
    const double z_land = config_.object_size.z + 0.5 * g.pad_height - config_.landing_depth;
    a.world.manipulator = tool_at(x, z_land, g.max_opening);
  } else {
    a.world.manipulator = tool_at(x, z_grasp, config_.closed_gap);
  }
  a.world.modules = sim::compute_contact(a.world, config_.world);
  for (int i = 0; i < 2; ++i) {
    a.tilt[i] = angle_between(a.world.modules[i].orientation,
                              sim::module_mount(a.world.manipulator.ee_pose, i));
  }

  if (!a.landed) {
    // Pinch holds the weight when friction on the weaker side of both pads suffices,
    // and both contacts persist after raising tool and object together.
    const auto& m = a.world.modules;
    const bool sides = m[0].in_contact && m[1].in_contact && std::abs(m[0].contact_normal.z) < 1e-9 &&
                       std::abs(m[1].contact_normal.z) < 1e-9;
    const double pinch = std::min(m[0].reaction_force.norm(), m[1].reaction_force.norm());
    if (sides && 2.0 * config_.friction * pinch >= config_.object_mass * 9.81) {
      sim::WorldState lifted = a.world;
      lifted.manipulator = tool_at(x, z_grasp + config_.lift_height, config_.closed_gap);
      lifted.object_pose.position.z += config_.lift_height;
      const auto held = sim::compute_contact(lifted, config_.world);
      a.lift_stable = held[0].in_contact && held[1].in_contact;
    }
  }
  a.outcome = compute_reward(a.world.modules, a.tilt, a.lift_stable, config_.baro_threshold,
                             config_.tilt_threshold);
  return a;
}

std::array<double, kObservationWidth> GraspEnv::observation_scale() {
  return {2.0, 2.0, 2.0, 2.0, 400.0, 400.0, 0.2, 0.2, 0.2};
}

std::vector<double> GraspEnv::observe(const sim::WorldState& w, const std::array<double, 2>& tilt) {
  const auto& tc = config_.world.tactile;
  std::normal_distribution<double> effort_noise(0.0, tc.effort_noise);
  std::uniform_real_distribution<double> baro_noise(-tc.baseline_noise, tc.baseline_noise);
  const sim::JointAngles tau = sim::contact_efforts(w, w.modules, config_.world);
  std::vector<double> obs;
  obs.reserve(kObservationWidth);
  for (double t : tau) obs.push_back(t + effort_noise(noise_));
  for (const auto& m : w.modules) obs.push_back(std::clamp(m.baro + baro_noise(noise_), 0.0, tc.saturation));
  const int k = tilt[1] > tilt[0] ? 1 : 0;
  const Quaternion delta =
      quat_delta(w.modules[k].orientation, sim::module_mount(w.manipulator.ee_pose, k));
  const EulerAngles e = quat_to_euler(delta);
  obs.push_back(e.roll);
  obs.push_back(e.pitch);
  obs.push_back(e.yaw);
  return obs;
}

double GraspEnv::clamp_x(double x) const {
  return std::clamp(x, config_.object_x - config_.x_range, config_.object_x + config_.x_range);
}

std::vector<double> GraspEnv::reset(std::uint64_t seed) { return reset(config_.mu, config_.sigma, seed); }

std::vector<double> GraspEnv::reset(double mu, double sigma, std::uint64_t seed) {
  if (!std::isfinite(mu) || !(sigma >= 0.0)) throw InvalidArgument("uncertainty needs finite mu and sigma >= 0");
  noise_.seed(derive_seed(seed, "noise"));
  p_ = p0_ = clamp_x(sim::sample_uncertain_position(mu, sigma, derive_seed(seed, "position")));
  steps_ = 0;
  done_ = false;
  last_reward_ = 0.0;
  total_reward_ = 0.0;
  world_.rng_seed = seed;
  world_.time = 0.0;
  world_.object_pose = object_pose_;
  world_.manipulator =
      tool_at(p_, config_.object_size.z + config_.hover_clearance, config_.world.gripper.max_opening);
  world_.modules = sim::compute_contact(world_, config_.world);
  return observe(world_, {0.0, 0.0});
}

StepResult GraspEnv::step(double action) {
  if (done_) throw EpisodeDone("grasp episode finished; call reset");
  if (!std::isfinite(action)) throw InvalidArgument("grasp action must be finite");
  if (action < -1.0 || action > 1.0) {
    log::warn("ActionOutOfRange: grasp action " + fmt(action) + " clamped to [-1, 1]");
    action = std::clamp(action, -1.0, 1.0);
  }
  p_ = clamp_x(p_ + config_.orient * config_.step * action);
  const Attempt a = attempt(p_);
  ++steps_;
  world_ = a.world;
  world_.time = static_cast<double>(steps_);

  StepResult r;
  r.observation = observe(world_, a.tilt);
  r.reward = a.outcome.reward;
  r.kind = a.outcome.kind;
  r.done = a.outcome.kind == RewardCase::Grasped || steps_ >= config_.max_steps ||
           (config_.terminate_on_collision && a.outcome.kind == RewardCase::Collision);
  done_ = r.done;
  last_reward_ = r.reward;
  total_reward_ += r.reward;
  return r;
}

void write_episode_log(const std::filesystem::path& path, const std::string& config_hash,
                       const std::vector<EpisodeLogRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << csv_hash_line(config_hash) << '\n' << "episode,steps,total_reward\n";
  for (const auto& r : rows) out << r.episode << ',' << r.steps << ',' << fmt(r.total_reward) << '\n';
}

std::vector<double> GraspTask::scale(std::vector<double> obs) {
  const auto s = GraspEnv::observation_scale();
  for (std::size_t i = 0; i < s.size(); ++i) obs.at(i) /= s[i];
  return obs;
}

std::vector<double> GraspTask::reset(std::uint64_t seed) { return scale(env_.reset(seed)); }

rl::EnvStep GraspTask::step(const std::vector<double>& action) {
  if (action.size() != 1) throw InvalidArgument("grasp action has one component");
  const StepResult r = env_.step(action[0]);
  return {scale(r.observation), r.reward, r.done};
}

}  // namespace tactile::grasp
