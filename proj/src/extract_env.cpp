#include "tactile/extract_env.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <queue>
#include <tuple>

#include "tactile/artifact.hpp"
#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/seed.hpp"

namespace tactile::extract {

using nlohmann::json;

namespace {

constexpr std::array<const char*, kActionCount> kTokens{"+x", "-x", "+z", "-z", "+rotY", "-rotY", "+rotZ", "-rotZ"};

Quaternion yaw_rotation(double a) { return axis_angle({0.0, 0.0, 1.0}, a); }

double deg(double rad) { return rad * 180.0 / kPi; }

sim::Pose apply_motion(const sim::Pose& from, Action a, const ExtractConfig& c) {
  sim::Pose to = from;
  const double t = c.translation, r = c.rotation;
  switch (a) {
    case Action::PlusX: to.position += rotate(from.orientation, {t, 0, 0}); break;
    case Action::MinusX: to.position += rotate(from.orientation, {-t, 0, 0}); break;
    case Action::PlusZ: to.position += rotate(from.orientation, {0, 0, t}); break;
    case Action::MinusZ: to.position += rotate(from.orientation, {0, 0, -t}); break;
    case Action::PlusRotY: to.orientation = quat_multiply(from.orientation, axis_angle({0, 1, 0}, r)); break;
    case Action::MinusRotY: to.orientation = quat_multiply(from.orientation, axis_angle({0, 1, 0}, -r)); break;
    case Action::PlusRotZ:
    case Action::MinusRotZ: {
      const Quaternion q = yaw_rotation(a == Action::PlusRotZ ? r : -r);
      to.position = rotate(q, from.position);
      to.orientation = quat_multiply(q, from.orientation);
      break;
    }
  }
  to.orientation = to.orientation.normalized();
  return to;
}

}  // namespace

std::string to_string(Action a) { return kTokens[static_cast<std::size_t>(a)]; }

Action action_from_token(const std::string& token) {
  for (int i = 0; i < kActionCount; ++i) {
    if (token == kTokens[static_cast<std::size_t>(i)]) return static_cast<Action>(i);
  }
  throw InvalidArgument("unknown motion key '" + token + "'");
}

void ExtractConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigInvalid(std::string("extract.") + name + " must be > 0");
  };
  positive(radius, "radius");
  positive(translation, "translation");
  positive(rotation, "rotation");
  positive(friction_threshold, "friction_threshold");
  positive(jam_excess, "jam_excess");
  positive(shaping_gain, "shaping_gain");
  positive(shaping_clip, "shaping_clip");
  if (!(goal_margin >= 0.0)) throw ConfigInvalid("extract.goal_margin must be >= 0");
  if (max_steps < 1) throw ConfigInvalid("extract.max_steps must be >= 1");
  if (friction_threshold >= 1.0) throw ConfigInvalid("extract.friction_threshold must be below 1");
}

json to_json(const ExtractConfig& c) {
  return json{{"world", sim::to_json(c.world)},
              {"peg",
               {{"hole_depth", c.peg.hole_depth},
                {"clearance", c.peg.clearance},
                {"peg_diameter", c.peg.peg_diameter},
                {"slant", c.peg.slant},
                {"arc_radius", c.peg.arc_radius},
                {"protrusion", c.peg.protrusion},
                {"grasp_offset", c.peg.grasp_offset}}},
              {"radius", c.radius},
              {"mouth_height", c.mouth_height},
              {"translation", c.translation},
              {"rotation", c.rotation},
              {"friction_threshold", c.friction_threshold},
              {"goal_margin", c.goal_margin},
              {"jam_excess", c.jam_excess},
              {"max_steps", c.max_steps},
              {"shaping_gain", c.shaping_gain},
              {"shaping_clip", c.shaping_clip}};
}

ExtractConfig extract_config_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string w = "extract";
  jf::reject_unknown(j,
                     {"world", "peg", "radius", "mouth_height", "translation", "rotation", "friction_threshold",
                      "goal_margin", "jam_excess", "max_steps", "shaping_gain", "shaping_clip"},
                     w);
  ExtractConfig c;
  if (j.contains("world")) c.world = sim::world_config_from_json(j["world"]);
  if (j.contains("peg")) {
    const auto& p = j["peg"];
    const std::string wp = "extract.peg";
    jf::reject_unknown(
        p, {"hole_depth", "clearance", "peg_diameter", "slant", "arc_radius", "protrusion", "grasp_offset"}, wp);
    jf::read(p, "hole_depth", c.peg.hole_depth, wp);
    jf::read(p, "clearance", c.peg.clearance, wp);
    jf::read(p, "peg_diameter", c.peg.peg_diameter, wp);
    jf::read(p, "slant", c.peg.slant, wp);
    jf::read(p, "arc_radius", c.peg.arc_radius, wp);
    jf::read(p, "protrusion", c.peg.protrusion, wp);
    jf::read(p, "grasp_offset", c.peg.grasp_offset, wp);
  }
  jf::read(j, "radius", c.radius, w);
  jf::read(j, "mouth_height", c.mouth_height, w);
  jf::read(j, "translation", c.translation, w);
  jf::read(j, "rotation", c.rotation, w);
  jf::read(j, "friction_threshold", c.friction_threshold, w);
  jf::read(j, "goal_margin", c.goal_margin, w);
  jf::read(j, "jam_excess", c.jam_excess, w);
  jf::read(j, "max_steps", c.max_steps, w);
  jf::read(j, "shaping_gain", c.shaping_gain, w);
  jf::read(j, "shaping_clip", c.shaping_clip, w);
  c.validate();
  return c;
}

std::string to_string(RewardCase c) {
  switch (c) {
    case RewardCase::Success: return "success";
    case RewardCase::Friction: return "friction";
    case RewardCase::Shaping: return "shaping";
  }
  return "unknown";
}

RewardOutcome compute_reward(const std::array<double, 2>& p, double rise, double delta_height,
                             const ExtractConfig& c) {
  if (rise >= c.goal_rise()) return {1.0, RewardCase::Success};
  if (std::max(p[0], p[1]) > c.friction_threshold) return {-0.5, RewardCase::Friction};
  return {std::clamp(c.shaping_gain * delta_height, -c.shaping_clip, c.shaping_clip), RewardCase::Shaping};
}

ExtractEnv::ExtractEnv(ExtractConfig config) : config_(std::move(config)) { config_.validate(); }

std::optional<sim::JointAngles> ExtractEnv::reach(const sim::Pose& tool) const {
  return sim::inverse_kinematics(tool, config_.world.arm, &joints_);
}

sim::ModulePair ExtractEnv::contact_at(const sim::Pose& tool) const {
  sim::WorldState w = world_;
  w.manipulator.ee_pose = tool;
  w.object_pose = hole_->displacement_for(tool);
  return sim::compute_contact(w, config_.world);
}

double ExtractEnv::rise() const { return tool_.position.z - seated_.position.z; }

Probe ExtractEnv::probe(const sim::Pose& from, Action a) const {
  if (!hole_) throw EnvFailure("extract env has not been reset");
  const sim::Pose to = apply_motion(from, a, config_);
  Probe p;
  const auto& tc = config_.world.tactile;
  auto scaled = [&](const sim::ModulePair& m) {
    return std::array<double, 2>{std::clamp(m[0].baro / tc.saturation, 0.0, 1.0),
                                 std::clamp(m[1].baro / tc.saturation, 0.0, 1.0)};
  };
  if (!reach(to)) {
    p.workspace_limited = true;
    p.tool = from;
    p.pressure = scaled(contact_at(from));
  } else {
    const sim::WallContact wc = hole_->wall_contact(hole_->displacement_for(to));
    p.pressure = scaled(contact_at(to));
    p.jammed = wc.excess > config_.jam_excess;
    p.tool = p.jammed ? from : to;
  }
  p.rise = p.tool.position.z - seated_.position.z;
  p.delta_height = p.tool.position.z - from.position.z;
  p.outcome = compute_reward(p.pressure, p.rise, p.delta_height, config_);
  return p;
}

std::vector<double> ExtractEnv::observe(const sim::ModulePair& m, const std::array<double, 2>& pressure) {
  std::vector<double> obs;
  obs.reserve(kObservationWidth);
  for (double v : {tool_.position.x, tool_.position.y, tool_.position.z}) obs.push_back(v);
  const Quaternion& q = tool_.orientation;
  for (double v : {q.w, q.x, q.y, q.z}) obs.push_back(v);
  std::uniform_real_distribution<double> noise(-config_.world.tactile.baseline_noise,
                                               config_.world.tactile.baseline_noise);
  for (double p : pressure) {
    obs.push_back(std::clamp(p + noise(noise_) / config_.world.tactile.saturation, 0.0, 1.0));
  }
  for (int i = 0; i < 2; ++i) {
    const Quaternion d = quat_delta(m[i].orientation, prev_modules_[i]);
    for (double v : {d.w, d.x, d.y, d.z}) obs.push_back(v);
    prev_modules_[i] = m[i].orientation;
  }
  return obs;
}

std::vector<double> ExtractEnv::reset(sim::PegProfile peg, double placement_yaw, std::uint64_t seed) {
  if (!std::isfinite(placement_yaw)) throw InvalidArgument("placement yaw must be finite");
  if (session_.is_open()) throw SessionClosed("stop the recording before resetting");
  peg_ = peg;
  yaw_ = placement_yaw;
  seed_ = seed;
  object_ = sim::ObjectSpec::peg_in_hole(peg, placement_yaw, config_.peg, config_.radius, config_.mouth_height);
  hole_.emplace(object_);
  seated_ = hole_->seated_tool();
  const auto q = sim::inverse_kinematics(seated_, config_.world.arm);
  if (!q) throw EnvFailure("seated peg pose is out of reach");
  joints_ = *q;
  tool_ = seated_;
  world_ = sim::WorldState{};
  world_.object = object_;
  world_.rng_seed = seed;
  world_.manipulator = sim::make_manipulator(joints_, config_.peg.peg_diameter, config_.world.arm);
  world_.object_pose = hole_->displacement_for(tool_);
  world_.modules = sim::compute_contact(world_, config_.world);
  for (int i = 0; i < 2; ++i) prev_modules_[i] = world_.modules[i].orientation;
  noise_.seed(derive_seed(seed, "noise"));
  steps_ = 0;
  done_ = false;
  const auto& tc = config_.world.tactile;
  obs_ = observe(world_.modules, {std::clamp(world_.modules[0].baro / tc.saturation, 0.0, 1.0),
                                  std::clamp(world_.modules[1].baro / tc.saturation, 0.0, 1.0)});
  return obs_;
}

ExtractStep ExtractEnv::step(Action a) {
  if (done_) throw EpisodeDone("extract episode finished; call reset");
  const Probe p = probe(tool_, a);
  if (!p.workspace_limited && !p.jammed) {
    tool_ = p.tool;
    joints_ = *reach(tool_);
    world_.manipulator = sim::make_manipulator(joints_, config_.peg.peg_diameter, config_.world.arm);
    world_.object_pose = hole_->displacement_for(tool_);
  }
  // A rejected push still registers on the pads.
  sim::WorldState felt = world_;
  if (p.jammed) {
    felt.manipulator.ee_pose = apply_motion(tool_, a, config_);
    felt.object_pose = hole_->displacement_for(felt.manipulator.ee_pose);
  }
  world_.modules = sim::compute_contact(felt, config_.world);
  ++steps_;
  world_.time = static_cast<double>(steps_);

  ExtractStep r;
  r.observation = obs_ = observe(world_.modules, p.pressure);
  r.reward = p.outcome.reward;
  r.kind = p.outcome.kind;
  r.jammed = p.jammed;
  r.workspace_limited = p.workspace_limited;
  r.done = p.outcome.kind == RewardCase::Success || steps_ >= config_.max_steps;
  done_ = r.done;
  return r;
}

void ExtractEnv::start_recording(const std::filesystem::path& path, const std::string& timestamp) {
  if (!hole_) throw EnvFailure("reset the extract env before recording");
  if (session_.is_open()) throw SessionClosed("a recording session is already open");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  session_.open(path, std::ios::trunc);
  if (!session_) throw EnvFailure("cannot open demo file " + path.string());
  session_path_ = path;
  const json header{{"type", "header"},
                    {"schema", "tactile-demo"},
                    {"version", 1},
                    {"peg", sim::to_string(peg_)},
                    {"yaw_deg", deg(yaw_)},
                    {"seed", seed_},
                    {"timestamp", timestamp},
                    {"config_hash", config_hash(to_json(config_))}};
  session_ << header.dump() << '\n';
  session_.flush();
}

ExtractStep ExtractEnv::teleop_step(const std::string& key) {
  if (!session_.is_open()) throw SessionClosed("no recording session is open");
  const Action a = action_from_token(key);
  if (done_) throw EpisodeDone("extract episode finished; call reset");
  session_ << rl::to_json(rl::DemoRecord{obs_, static_cast<int>(a)}, kActionCount).dump() << '\n';
  session_.flush();
  return step(a);
}

std::filesystem::path ExtractEnv::stop_recording() {
  if (!session_.is_open()) throw SessionClosed("no recording session is open");
  session_.close();
  return session_path_;
}

DemoFile read_demo_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open demo file " + path.string());
  DemoFile f;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!header) {
      if (j.value("type", "") != "header" || j.value("schema", "") != "tactile-demo") {
        throw InvalidArgument(path.string() + ": missing demo header");
      }
      try {
        f.header.peg = sim::peg_profile_from_string(j.at("peg").get<std::string>());
        f.header.yaw_deg = j.at("yaw_deg").get<double>();
        f.header.seed = j.at("seed").get<std::uint64_t>();
        f.header.timestamp = j.at("timestamp").get<std::string>();
        f.header.config_hash = j.at("config_hash").get<std::string>();
      } catch (const json::exception& e) {
        throw InvalidArgument(path.string() + ": bad demo header: " + e.what());
      }
      header = true;
      continue;
    }
    rl::DemoRecord r = rl::demo_record_from_json(j);
    if (r.observation.size() != static_cast<std::size_t>(kObservationWidth)) {
      throw InvalidArgument(path.string() + ":" + std::to_string(lineno) + ": observation width");
    }
    for (int k = 7; k < 9; ++k) {
      const double p = r.observation[static_cast<std::size_t>(k)];
      if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("demo pressure outside [0, 1]");
    }
    if (r.action >= kActionCount) throw InvalidArgument("demo action outside the action set");
    f.records.push_back(std::move(r));
  }
  if (!header) throw InvalidArgument(path.string() + ": empty demo file");
  return f;
}

std::optional<std::vector<Action>> plan_extraction(const ExtractEnv& env, const std::vector<Action>& allowed,
                                                   double friction_cost, std::uint64_t seed) {
  using Key = std::tuple<long, long, long, long, long, long>;
  auto key = [](const sim::Pose& p) {
    auto q = [](double v, double s) { return std::lround(v / s); };
    Quaternion o = p.orientation;
    if (o.w < 0) o = {-o.w, -o.x, -o.y, -o.z};
    return Key{q(p.position.x, 1e-5), q(p.position.y, 1e-5), q(p.position.z, 1e-5),
               q(o.x, 1e-5), q(o.y, 1e-5), q(o.z, 1e-5)};
  };
  std::vector<Action> order = allowed;
  std::mt19937_64 rng(derive_seed(seed, "plan"));
  std::shuffle(order.begin(), order.end(), rng);

  struct Node {
    sim::Pose pose;
    int parent;
    Action action;
    int depth;
  };
  std::vector<Node> nodes{{env.tool(), -1, Action::PlusZ, 0}};
  std::map<Key, double> best{{key(env.tool()), 0.0}};
  using Item = std::tuple<double, int, int>;  // cost, insertion order, node
  std::priority_queue<Item, std::vector<Item>, std::greater<>> open;
  open.push({0.0, 0, 0});
  int counter = 1;
  const int cap = env.config().max_steps - env.steps();
  while (!open.empty()) {
    const auto [cost, ord, id] = open.top();
    open.pop();
    (void)ord;
    const Node cur = nodes[static_cast<std::size_t>(id)];
    if (cost > best[key(cur.pose)]) continue;
    if (cur.pose.position.z - env.seated().position.z >= env.config().goal_rise()) {
      std::vector<Action> path;
      for (int n = id; nodes[static_cast<std::size_t>(n)].parent >= 0; n = nodes[static_cast<std::size_t>(n)].parent) {
        path.push_back(nodes[static_cast<std::size_t>(n)].action);
      }
      std::reverse(path.begin(), path.end());
      return path;
    }
    if (cur.depth >= cap) continue;
    for (Action a : order) {
      const Probe p = env.probe(cur.pose, a);
      if (p.workspace_limited || p.jammed) continue;
      const double c = cost + 1.0 + (p.outcome.kind == RewardCase::Friction ? friction_cost : 0.0);
      nodes.push_back({p.tool, id, a, cur.depth + 1});
      const int nid = static_cast<int>(nodes.size()) - 1;
      const Key k = key(p.tool);
      auto it = best.find(k);
      if (it != best.end() && it->second <= c) {
        nodes.pop_back();
        continue;
      }
      best[k] = c;
      open.push({c, counter++, nid});
    }
  }
  return std::nullopt;
}

int record_scripted_demo(ExtractEnv& env, sim::PegProfile peg, double placement_yaw, std::uint64_t seed,
                         const std::filesystem::path& path, const std::string& timestamp) {
  env.reset(peg, placement_yaw, seed);
  const std::vector<Action> all{Action::PlusX,    Action::MinusX,    Action::PlusZ,    Action::MinusZ,
                                Action::PlusRotY, Action::MinusRotY, Action::PlusRotZ, Action::MinusRotZ};
  const auto plan = plan_extraction(env, all, 20.0, seed);
  if (!plan) throw EnvFailure("no extraction path for the " + sim::to_string(peg) + " peg");
  env.start_recording(path, timestamp);
  for (Action a : *plan) env.teleop_step(to_string(a));
  env.stop_recording();
  return static_cast<int>(plan->size());
}

sim::Pose seated_tool(const ExtractConfig& c, sim::PegProfile peg, double placement_yaw) {
  return sim::PegHole(sim::ObjectSpec::peg_in_hole(peg, placement_yaw, c.peg, c.radius, c.mouth_height))
      .seated_tool();
}

std::vector<double> scale_observation(std::vector<double> obs, const Vec3& seated) {
  if (obs.size() != static_cast<std::size_t>(kObservationWidth)) throw ShapeMismatch("extract observation width");
  obs[0] = (obs[0] - seated.x) * 20.0;
  obs[1] = (obs[1] - seated.y) * 20.0;
  obs[2] = (obs[2] - seated.z) * 20.0;
  return obs;
}

std::vector<rl::DemoRecord> training_demos(const DemoFile& f, const ExtractConfig& c) {
  const Vec3 seated = seated_tool(c, f.header.peg, f.header.yaw_deg * kPi / 180.0).position;
  std::vector<rl::DemoRecord> out;
  out.reserve(f.records.size());
  for (const auto& r : f.records) out.push_back({scale_observation(r.observation, seated), r.action});
  return out;
}

ExtractTask::ExtractTask(ExtractConfig config, std::vector<sim::PegProfile> pegs, std::vector<double> yaws)
    : env_(std::move(config)), pegs_(std::move(pegs)), yaws_(std::move(yaws)) {
  if (pegs_.empty() || yaws_.empty()) throw InvalidArgument("extract task needs pegs and yaws");
}

std::vector<double> ExtractTask::reset(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "task"));
  const auto peg = pegs_[std::uniform_int_distribution<std::size_t>(0, pegs_.size() - 1)(rng)];
  const double yaw = yaws_[std::uniform_int_distribution<std::size_t>(0, yaws_.size() - 1)(rng)];
  return scale(env_.reset(peg, yaw, seed));
}

rl::EnvStep ExtractTask::step(const std::vector<double>& action) {
  const auto a = static_cast<int>(action.at(0));
  if (a < 0 || a >= kActionCount) throw InvalidArgument("extract action index out of range");
  const ExtractStep s = env_.step(static_cast<Action>(a));
  return {scale(s.observation), s.reward, s.done};
}

}  // namespace tactile::extract
