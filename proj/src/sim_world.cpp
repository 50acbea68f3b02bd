#include "tactile/sim_world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tactile/errors.hpp"
#include "tactile/json_fields.hpp"
#include "tactile/seed.hpp"

namespace tactile::sim {

using nlohmann::json;

namespace {

Quaternion rot_z(double a) { return axis_angle({0, 0, 1}, a); }
Quaternion rot_y(double a) { return axis_angle({0, 1, 0}, a); }

struct PlanarChain {
  double r = 0.0;
  double z = 0.0;
  double phi = 0.0;
  std::array<double, 4> rs{};
  std::array<double, 4> zs{};
};

PlanarChain planar_chain(const JointAngles& q, const ArmConfig& arm) {
  PlanarChain c;
  c.zs[0] = arm.base_height;
  double phi = 0.0;
  for (int k = 0; k < 3; ++k) {
    phi += q[k + 1];
    c.rs[k + 1] = c.rs[k] + arm.links[k] * std::cos(phi);
    c.zs[k + 1] = c.zs[k] + arm.links[k] * std::sin(phi);
  }
  c.r = c.rs[3];
  c.z = c.zs[3];
  c.phi = phi;
  return c;
}

Pose fk_unchecked(const JointAngles& q, const ArmConfig& arm) {
  const PlanarChain c = planar_chain(q, arm);
  Pose p;
  p.position = {c.r * std::cos(q[0]), c.r * std::sin(q[0]), c.z};
  p.orientation = quat_multiply(rot_z(q[0]), rot_y(-c.phi));
  return p;
}

bool within_limits(const JointAngles& q, const ArmConfig& arm, double tol = 0.0) {
  for (int i = 0; i < 4; ++i) {
    if (!(q[i] >= arm.lower[i] - tol && q[i] <= arm.upper[i] + tol)) return false;
  }
  return true;
}

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }
json quat_json(const Quaternion& q) { return json::array({q.w, q.x, q.y, q.z}); }

double overlap(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

// Chord of the object's horizontal cross-section along the line p + s·a.
struct Chord {
  double s_lo = 0.0;
  double s_hi = 0.0;
  Vec3 normal_lo;  // outward surface normal at the entry point
  Vec3 normal_hi;
};

std::optional<Chord> object_chord(const ObjectSpec& obj, const Pose& obj_pose, const Vec3& p,
                                  const Vec3& a) {
  const Vec3 c{obj_pose.position.x, obj_pose.position.y, 0.0};
  const Vec3 rel{p.x - c.x, p.y - c.y, 0.0};
  if (obj.kind == ObjectKind::Cylinder) {
    const double radius = 0.5 * obj.dimensions.x;
    const double sc = -rel.dot(a);
    const Vec3 b{-a.y, a.x, 0.0};
    const double e = rel.dot(b);
    if (std::abs(e) >= radius) return std::nullopt;
    const double hw = std::sqrt(radius * radius - e * e);
    Chord ch{sc - hw, sc + hw, {}, {}};
    ch.normal_lo = (rel + a * ch.s_lo).normalized();
    ch.normal_hi = (rel + a * ch.s_hi).normalized();
    return ch;
  }
  // Cuboid: slab intersection in the object frame.
  const double yaw = 2.0 * std::atan2(obj_pose.orientation.z, obj_pose.orientation.w);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const Vec3 ex{cy, sy, 0.0}, ey{-sy, cy, 0.0};
  const std::array<Vec3, 2> axes{ex, ey};
  const std::array<double, 2> half{0.5 * obj.dimensions.x, 0.5 * obj.dimensions.y};
  double t_in = -std::numeric_limits<double>::infinity();
  double t_out = std::numeric_limits<double>::infinity();
  Vec3 n_in, n_out;
  for (int k = 0; k < 2; ++k) {
    const double pk = rel.dot(axes[k]);
    const double ak = a.dot(axes[k]);
    if (std::abs(ak) < 1e-12) {
      if (std::abs(pk) >= half[k]) return std::nullopt;
      continue;
    }
    double t1 = (-half[k] - pk) / ak;
    double t2 = (half[k] - pk) / ak;
    Vec3 n1 = -axes[k], n2 = axes[k];
    if (t1 > t2) {
      std::swap(t1, t2);
      std::swap(n1, n2);
    }
    if (t1 > t_in) {
      t_in = t1;
      n_in = n1;
    }
    if (t2 < t_out) {
      t_out = t2;
      n_out = n2;
    }
  }
  if (!(t_in < t_out)) return std::nullopt;
  return Chord{t_in, t_out, n_in, n_out};
}

void apply_tilt(TactileModuleState& m, const Vec3& pad_normal, double angle) {
  const Vec3 axis = (-pad_normal).cross(m.contact_normal);
  if (axis.norm() < 1e-12 || angle == 0.0) return;
  m.orientation = quat_multiply(axis_angle(axis, angle), m.orientation);
}

}  // namespace

double TactileConfig::baro_for_depth(double depth) const {
  if (!(depth > 0.0)) return baseline;
  return std::min(saturation, baseline + pressure_gain() * depth);
}

// ---------------------------------------------------------------------------
// Config

json to_json(const WorldConfig& c) {
  return json{
      {"arm",
       {{"base_height", c.arm.base_height},
        {"links", c.arm.links},
        {"lower", c.arm.lower},
        {"upper", c.arm.upper}}},
      {"gripper",
       {{"pad_thickness", c.gripper.pad_thickness},
        {"pad_height", c.gripper.pad_height},
        {"max_opening", c.gripper.max_opening},
        {"peg_squeeze", c.gripper.peg_squeeze}}},
      {"tactile",
       {{"baseline", c.tactile.baseline},
        {"baseline_noise", c.tactile.baseline_noise},
        {"saturation", c.tactile.saturation},
        {"saturation_depth", c.tactile.saturation_depth},
        {"tilt_gain", c.tactile.tilt_gain},
        {"contact_stiffness", c.tactile.contact_stiffness},
        {"effort_gain", c.tactile.effort_gain},
        {"effort_noise", c.tactile.effort_noise},
        {"wall_tilt_gain", c.tactile.wall_tilt_gain}}},
  };
}

WorldConfig world_config_from_json(const json& j) {
  namespace jf = json_fields;
  WorldConfig c;
  jf::reject_unknown(j, {"arm", "gripper", "tactile"}, "world");
  if (j.contains("arm")) {
    const auto& a = j["arm"];
    jf::reject_unknown(a, {"base_height", "links", "lower", "upper"}, "world.arm");
    jf::read(a, "base_height", c.arm.base_height, "world.arm");
    jf::read(a, "links", c.arm.links, "world.arm");
    jf::read(a, "lower", c.arm.lower, "world.arm");
    jf::read(a, "upper", c.arm.upper, "world.arm");
  }
  if (j.contains("gripper")) {
    const auto& g = j["gripper"];
    jf::reject_unknown(g, {"pad_thickness", "pad_height", "max_opening", "peg_squeeze"},
                       "world.gripper");
    jf::read(g, "pad_thickness", c.gripper.pad_thickness, "world.gripper");
    jf::read(g, "pad_height", c.gripper.pad_height, "world.gripper");
    jf::read(g, "max_opening", c.gripper.max_opening, "world.gripper");
    jf::read(g, "peg_squeeze", c.gripper.peg_squeeze, "world.gripper");
  }
  if (j.contains("tactile")) {
    const auto& t = j["tactile"];
    jf::reject_unknown(t,
                       {"baseline", "baseline_noise", "saturation", "saturation_depth",
                        "tilt_gain", "contact_stiffness", "effort_gain", "effort_noise",
                        "wall_tilt_gain"},
                       "world.tactile");
    jf::read(t, "baseline", c.tactile.baseline, "world.tactile");
    jf::read(t, "baseline_noise", c.tactile.baseline_noise, "world.tactile");
    jf::read(t, "saturation", c.tactile.saturation, "world.tactile");
    jf::read(t, "saturation_depth", c.tactile.saturation_depth, "world.tactile");
    jf::read(t, "tilt_gain", c.tactile.tilt_gain, "world.tactile");
    jf::read(t, "contact_stiffness", c.tactile.contact_stiffness, "world.tactile");
    jf::read(t, "effort_gain", c.tactile.effort_gain, "world.tactile");
    jf::read(t, "effort_noise", c.tactile.effort_noise, "world.tactile");
    jf::read(t, "wall_tilt_gain", c.tactile.wall_tilt_gain, "world.tactile");
  }
  for (int i = 0; i < 4; ++i) {
    if (!(c.arm.lower[i] < c.arm.upper[i])) throw ConfigInvalid("world.arm: lower >= upper");
  }
  for (double l : c.arm.links) {
    if (!(l > 0.0)) throw ConfigInvalid("world.arm.links must be positive");
  }
  if (!(c.tactile.saturation > c.tactile.baseline) || !(c.tactile.saturation_depth > 0.0)) {
    throw ConfigInvalid("world.tactile: saturation must exceed baseline at positive depth");
  }
  if (!(c.gripper.pad_thickness > 0.0) || !(c.gripper.pad_height > 0.0) ||
      !(c.gripper.max_opening > 0.0)) {
    throw ConfigInvalid("world.gripper dimensions must be positive");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Kinematics

Pose forward_kinematics(const JointAngles& q, const ArmConfig& arm) {
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(q[i]) || q[i] < arm.lower[i] || q[i] > arm.upper[i]) {
      throw JointLimit("joint " + std::to_string(i + 1) + " = " + std::to_string(q[i]) +
                       " outside [" + std::to_string(arm.lower[i]) + ", " +
                       std::to_string(arm.upper[i]) + "]");
    }
  }
  return fk_unchecked(q, arm);
}

std::optional<JointAngles> inverse_kinematics(const Pose& target, const ArmConfig& arm,
                                              const JointAngles* prefer) {
  const Quaternion q = target.orientation.normalized();
  const Vec3 tx = rotate(q, {1, 0, 0});
  const Vec3 ty = rotate(q, {0, 1, 0});
  if (std::abs(ty.z) > 1e-6) return std::nullopt;
  const double yaw = std::atan2(-ty.x, ty.y);
  const Vec3 radial{std::cos(yaw), std::sin(yaw), 0.0};
  const Vec3 lateral{-std::sin(yaw), std::cos(yaw), 0.0};
  const Vec3& p = target.position;
  if (std::abs(p.dot(lateral)) > 1e-6) return std::nullopt;
  const double r = p.dot(radial);
  const double phi = std::atan2(tx.z, tx.dot(radial));

  const double l1 = arm.links[0], l2 = arm.links[1], l3 = arm.links[2];
  const double wr = r - l3 * std::cos(phi);
  const double wz = p.z - arm.base_height - l3 * std::sin(phi);
  const double d2 = wr * wr + wz * wz;
  double c3 = (d2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
  if (c3 > 1.0 + 1e-12 || c3 < -1.0 - 1e-12) return std::nullopt;
  c3 = std::clamp(c3, -1.0, 1.0);
  const double a3 = std::acos(c3);

  std::optional<JointAngles> best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (double t3 : {-a3, a3}) {  // elbow-up first
    const double t2 = std::atan2(wz, wr) - std::atan2(l2 * std::sin(t3), l1 + l2 * std::cos(t3));
    const double t4 = wrap_angle(phi - t2 - t3);
    JointAngles sol{wrap_angle(yaw), wrap_angle(t2), t3, t4};
    if (!within_limits(sol, arm)) continue;
    double cost = 0.0;
    if (prefer) {
      for (int i = 0; i < 4; ++i) cost += std::abs(wrap_angle(sol[i] - (*prefer)[i]));
    }
    if (!best || cost < best_cost) {
      best = sol;
      best_cost = cost;
    }
    if (!prefer) break;
  }
  return best;
}

std::array<Vec3, 5> link_points(const JointAngles& q, const ArmConfig& arm) {
  const PlanarChain c = planar_chain(q, arm);
  const double cy = std::cos(q[0]), sy = std::sin(q[0]);
  std::array<Vec3, 5> pts;
  pts[0] = {0.0, 0.0, 0.0};
  for (int k = 0; k < 4; ++k) pts[k + 1] = {c.rs[k] * cy, c.rs[k] * sy, c.zs[k]};
  return pts;
}

ManipulatorState make_manipulator(const JointAngles& joints, double opening,
                                  const ArmConfig& arm) {
  ManipulatorState m;
  m.joint_angles = joints;
  m.ee_pose = forward_kinematics(joints, arm);
  m.gripper_opening = opening;
  return m;
}

Quaternion downward_tool(double base_yaw) {
  return quat_multiply(rot_z(base_yaw), rot_y(kPi / 2.0));
}

// ---------------------------------------------------------------------------
// Objects

std::string to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::Cylinder: return "cylinder";
    case ObjectKind::Cuboid: return "cuboid";
    case ObjectKind::Peg: return "peg";
  }
  return "?";
}

std::string to_string(PegProfile profile) {
  switch (profile) {
    case PegProfile::Vertical: return "vertical";
    case PegProfile::Slanted: return "slanted";
    case PegProfile::Curved: return "curved";
  }
  return "?";
}

PegProfile peg_profile_from_string(const std::string& name) {
  if (name == "vertical") return PegProfile::Vertical;
  if (name == "slanted") return PegProfile::Slanted;
  if (name == "curved") return PegProfile::Curved;
  throw InvalidArgument("unknown peg profile '" + name + "'");
}

ObjectSpec ObjectSpec::cylinder(double diameter, double height) {
  ObjectSpec s;
  s.kind = ObjectKind::Cylinder;
  s.dimensions = {diameter, diameter, height};
  s.validate();
  return s;
}

ObjectSpec ObjectSpec::cuboid(const Vec3& size) {
  ObjectSpec s;
  s.kind = ObjectKind::Cuboid;
  s.dimensions = size;
  s.validate();
  return s;
}

namespace {

double channel_length(PegProfile profile, const PegGeometry& g) {
  switch (profile) {
    case PegProfile::Vertical: return g.hole_depth;
    case PegProfile::Slanted: return g.hole_depth / std::cos(g.slant);
    case PegProfile::Curved: return g.arc_radius * std::asin(g.hole_depth / g.arc_radius);
  }
  return g.hole_depth;
}

}  // namespace

ObjectSpec ObjectSpec::peg_in_hole(PegProfile profile, double placement_yaw,
                                   const PegGeometry& g, double radius, double mouth_height) {
  ObjectSpec s;
  s.kind = ObjectKind::Peg;
  s.peg_profile = profile;
  s.peg = g;
  s.placement_yaw = placement_yaw;
  s.hole_position = {radius * std::cos(placement_yaw), radius * std::sin(placement_yaw),
                     mouth_height};
  s.dimensions = {g.peg_diameter, g.peg_diameter, channel_length(profile, g) + g.protrusion};
  s.validate();
  return s;
}

void ObjectSpec::validate() const {
  if (!(dimensions.x > 0 && dimensions.y > 0 && dimensions.z > 0)) {
    throw InvalidArgument("object dimensions must be positive");
  }
  if (kind != ObjectKind::Peg && peg_profile) {
    throw InvalidArgument("peg_profile is only defined for pegs");
  }
  if (kind == ObjectKind::Cylinder && dimensions.x != dimensions.y) {
    throw InvalidArgument("cylinder footprint must be circular");
  }
  if (kind == ObjectKind::Peg) {
    if (!peg_profile) throw InvalidArgument("peg requires a profile");
    if (!(peg.hole_depth > 0 && peg.clearance >= 0 && peg.peg_diameter > 0 &&
          peg.protrusion >= peg.grasp_offset && peg.grasp_offset >= 0)) {
      throw InvalidArgument("inconsistent peg geometry");
    }
    if (*peg_profile == PegProfile::Curved && !(peg.arc_radius > peg.hole_depth)) {
      throw InvalidArgument("curved peg arc radius must exceed the hole depth");
    }
    if (*peg_profile == PegProfile::Slanted && !(std::abs(peg.slant) < kPi / 2.0)) {
      throw InvalidArgument("slant must be below 90 degrees");
    }
  }
}

json to_json(const ObjectSpec& s) {
  json j{{"kind", to_string(s.kind)}, {"dimensions", vec_json(s.dimensions)}};
  if (s.peg_profile) {
    j["peg_profile"] = to_string(*s.peg_profile);
    j["hole_pose"] = {{"position", vec_json(s.hole_position)}, {"yaw", s.placement_yaw}};
    j["placement_yaw"] = s.placement_yaw;
    j["peg"] = {{"hole_depth", s.peg.hole_depth},     {"clearance", s.peg.clearance},
                {"peg_diameter", s.peg.peg_diameter}, {"slant", s.peg.slant},
                {"arc_radius", s.peg.arc_radius},     {"protrusion", s.peg.protrusion},
                {"grasp_offset", s.peg.grasp_offset}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Peg / hole

// Hole coordinates: u along the placement azimuth, v = z × u, z up, origin
// at the mouth centre. Channels bend towards +u with depth.

PegHole::PegHole(const ObjectSpec& spec, int samples) : spec_(spec) {
  if (spec.kind != ObjectKind::Peg || !spec.peg_profile) {
    throw InvalidArgument("PegHole requires a peg object");
  }
  if (samples < 2) throw InvalidArgument("PegHole needs at least two samples");
  profile_ = *spec.peg_profile;
  const PegGeometry& g = spec.peg;
  Vec3 top_tangent{0.0, 0.0, 1.0};
  if (profile_ == PegProfile::Slanted) top_tangent = {-std::sin(g.slant), 0.0, std::cos(g.slant)};
  if (profile_ == PegProfile::Curved) arc_end_ = std::asin(g.hole_depth / g.arc_radius);

  const double lc = channel_length(profile_, g);
  const double total = lc + g.protrusion;
  seated_local_.reserve(samples);
  for (int i = 0; i < samples; ++i) {
    const double s = total * i / (samples - 1);  // arc length from the bottom
    if (s >= lc) {
      seated_local_.push_back(top_tangent * (s - lc));
      continue;
    }
    const double down = lc - s;  // arc length below the mouth
    switch (profile_) {
      case PegProfile::Vertical: seated_local_.push_back({0.0, 0.0, -down}); break;
      case PegProfile::Slanted:
        seated_local_.push_back({down * std::sin(g.slant), 0.0, -down * std::cos(g.slant)});
        break;
      case PegProfile::Curved: {
        const double beta = down / g.arc_radius;
        seated_local_.push_back(
            {g.arc_radius * (1.0 - std::cos(beta)), 0.0, -g.arc_radius * std::sin(beta)});
        break;
      }
    }
  }
  grasp_local_ = top_tangent * g.grasp_offset;
}

Vec3 PegHole::to_world(double u, double v, double z) const {
  const double c = std::cos(spec_.placement_yaw), s = std::sin(spec_.placement_yaw);
  return spec_.hole_position + Vec3{u * c - v * s, u * s + v * c, z};
}

Pose PegHole::seated_tool() const {
  return {to_world(grasp_local_.x, grasp_local_.y, grasp_local_.z), rot_z(spec_.placement_yaw)};
}

Pose PegHole::displacement_for(const Pose& tool) const {
  const Pose seated = seated_tool();
  return {tool.position - seated.position,
          quat_multiply(tool.orientation, quat_inverse(seated.orientation))};
}

std::vector<Vec3> PegHole::peg_points(const Pose& d) const {
  const Vec3 g0 = to_world(grasp_local_.x, grasp_local_.y, grasp_local_.z);
  std::vector<Vec3> out;
  out.reserve(seated_local_.size());
  for (const Vec3& p : seated_local_) {
    const Vec3 w = to_world(p.x, p.y, p.z);
    out.push_back(g0 + rotate(d.orientation, w - g0) + d.position);
  }
  return out;
}

std::vector<Vec3> PegHole::channel_points() const {
  std::vector<Vec3> out;
  for (auto it = seated_local_.rbegin(); it != seated_local_.rend(); ++it) {
    if (it->z <= 1e-12) out.push_back(to_world(it->x, it->y, it->z));
  }
  return out;
}

double PegHole::channel_distance(double u, double z, double* nu, double* nz) const {
  const PegGeometry& g = spec_.peg;
  double cu = 0.0, cz = 0.0;  // closest centreline point
  switch (profile_) {
    case PegProfile::Vertical:
    case PegProfile::Slanted: {
      const double eu = profile_ == PegProfile::Vertical ? 0.0 : g.hole_depth * std::tan(g.slant);
      const double ez = -g.hole_depth;
      const double len2 = eu * eu + ez * ez;
      const double t = std::clamp((u * eu + z * ez) / len2, 0.0, 1.0);
      cu = t * eu;
      cz = t * ez;
      break;
    }
    case PegProfile::Curved: {
      const double R = g.arc_radius;
      double beta = std::atan2(-z, R - u);
      beta = std::clamp(beta, 0.0, arc_end_);
      cu = R * (1.0 - std::cos(beta));
      cz = -R * std::sin(beta);
      break;
    }
  }
  const double du = u - cu, dz = z - cz;
  const double dist = std::hypot(du, dz);
  if (nu && nz) {
    if (dist > 1e-15) {
      *nu = -du / dist;
      *nz = -dz / dist;
    } else {
      *nu = 0.0;
      *nz = 0.0;
    }
  }
  return dist;
}

WallContact PegHole::wall_contact(const Pose& d) const {
  WallContact wc;
  const double c = std::cos(spec_.placement_yaw), s = std::sin(spec_.placement_yaw);
  const double clearance = spec_.peg.clearance;
  for (const Vec3& p : peg_points(d)) {
    const Vec3 rel = p - spec_.hole_position;
    const double u = rel.x * c + rel.y * s;
    const double v = -rel.x * s + rel.y * c;
    const double z = rel.z;
    if (z >= 0.0) continue;
    wc.inside = true;
    double nu = 0.0, nz = 0.0;
    const double planar = channel_distance(u, z, &nu, &nz);
    const double dist = std::hypot(planar, v);
    const double excess = dist - clearance;
    if (excess > wc.excess) {
      wc.excess = excess;
      // Normal points from the wall back into the channel.
      Vec3 local{nu * planar, dist > 1e-15 ? -v : 0.0, nz * planar};
      local = local.norm() > 1e-15 ? local.normalized() : Vec3{};
      wc.normal = {local.x * c - local.y * s, local.x * s + local.y * c, local.z};
    }
  }
  return wc;
}

double PegHole::bottom_height(const Pose& d) const {
  double lowest = std::numeric_limits<double>::infinity();
  for (const Vec3& p : peg_points(d)) lowest = std::min(lowest, p.z);
  return lowest - spec_.hole_position.z;
}

// ---------------------------------------------------------------------------
// Contact

Vec3 closing_axis(const Pose& tool) { return rotate(tool.orientation, {0, 1, 0}); }

Quaternion module_mount(const Pose& tool, int module) {
  if (module == 0) return tool.orientation;
  return quat_multiply(tool.orientation, rot_z(kPi));
}

ModulePair compute_contact(const WorldState& world, const WorldConfig& config) {
  const Pose& tool = world.manipulator.ee_pose;
  const TactileConfig& tc = config.tactile;
  const GripperConfig& gc = config.gripper;
  const Vec3 a = closing_axis(tool);
  const double half = 0.5 * world.manipulator.gripper_opening;

  ModulePair out;
  for (int i = 0; i < 2; ++i) {
    out[i].baro = tc.baseline;
    out[i].orientation = module_mount(tool, i);
  }
  const std::array<Vec3, 2> pad_normal{a, -a};

  if (world.object.kind == ObjectKind::Peg) {
    PegHole hole(world.object);
    const WallContact wc = hole.wall_contact(world.object_pose);
    for (int i = 0; i < 2; ++i) {
      TactileModuleState& m = out[i];
      m.depth = gc.peg_squeeze + wc.excess;
      m.in_contact = m.depth > 0.0;
      m.baro = tc.baro_for_depth(m.depth);
      m.contact_normal = -pad_normal[i];
      m.reaction_force = m.contact_normal * (tc.contact_stiffness * gc.peg_squeeze);
      if (wc.excess > 0.0) {
        m.reaction_force += wc.normal * (tc.contact_stiffness * wc.excess * 0.5);
        const Vec3 axis = (-pad_normal[i]).cross(wc.normal);
        if (axis.norm() > 1e-12) {
          m.orientation =
              quat_multiply(axis_angle(axis, tc.wall_tilt_gain * wc.excess), m.orientation);
        }
        m.incidence = std::acos(std::clamp(wc.normal.dot(-pad_normal[i]), -1.0, 1.0));
      }
    }
    return out;
  }

  const std::optional<Chord> chord = object_chord(world.object, world.object_pose, tool.position, a);
  if (!chord) return out;
  const double zb = world.object_pose.position.z;
  const double zt = zb + world.object.dimensions.z;
  const double pz0 = tool.position.z - 0.5 * gc.pad_height;
  const double pz1 = tool.position.z + 0.5 * gc.pad_height;
  const double oz = overlap(pz0, pz1, zb, zt);
  if (oz <= 0.0) return out;

  const std::array<std::array<double, 2>, 2> pad_s{
      {{-half - gc.pad_thickness, -half}, {half, half + gc.pad_thickness}}};
  for (int i = 0; i < 2; ++i) {
    const double os = overlap(pad_s[i][0], pad_s[i][1], chord->s_lo, chord->s_hi);
    if (os <= 0.0) continue;
    TactileModuleState& m = out[i];
    m.in_contact = true;
    if (os <= oz) {
      m.depth = os;
      m.contact_normal = i == 0 ? chord->normal_lo : chord->normal_hi;
    } else {
      m.depth = oz;
      const double pad_mid = 0.5 * (pz0 + pz1);
      m.contact_normal = pad_mid >= 0.5 * (zb + zt) ? Vec3{0, 0, 1} : Vec3{0, 0, -1};
    }
    m.incidence = std::acos(std::clamp(m.contact_normal.dot(-pad_normal[i]), -1.0, 1.0));
    m.baro = tc.baro_for_depth(m.depth);
    m.reaction_force = m.contact_normal * (tc.contact_stiffness * m.depth);
    apply_tilt(m, pad_normal[i], tc.tilt_gain * m.incidence);
  }
  return out;
}

JointAngles contact_efforts(const WorldState& world, const ModulePair& modules,
                            const WorldConfig& config) {
  Vec3 force;
  for (const auto& m : modules) force += m.reaction_force;
  JointAngles tau{};
  const JointAngles& q = world.manipulator.joint_angles;
  constexpr double h = 1e-6;
  for (int j = 0; j < 4; ++j) {
    JointAngles qp = q, qm = q;
    qp[j] += h;
    qm[j] -= h;
    const Vec3 col = (fk_unchecked(qp, config.arm).position - fk_unchecked(qm, config.arm).position) /
                     (2.0 * h);
    tau[j] = config.tactile.effort_gain * col.dot(force);
  }
  return tau;
}

json to_json(const WorldState& w, const WorldConfig& config) {
  const ManipulatorState& m = w.manipulator;
  json links = json::array();
  for (const Vec3& p : link_points(m.joint_angles, config.arm)) links.push_back(vec_json(p));
  json modules = json::array();
  for (const auto& s : w.modules) {
    modules.push_back({{"baro", s.baro},
                       {"pressure", std::clamp(s.baro / config.tactile.saturation, 0.0, 1.0)},
                       {"orientation", quat_json(s.orientation)},
                       {"contact_normal", vec_json(s.contact_normal)},
                       {"depth", s.depth},
                       {"in_contact", s.in_contact}});
  }
  json obj = to_json(w.object);
  obj["pose"] = {{"position", vec_json(w.object_pose.position)},
                 {"orientation", quat_json(w.object_pose.orientation)}};
  if (w.object.kind == ObjectKind::Peg) {
    PegHole hole(w.object, 16);
    json peg = json::array(), channel = json::array();
    for (const Vec3& p : hole.peg_points(w.object_pose)) peg.push_back(vec_json(p));
    for (const Vec3& p : hole.channel_points()) channel.push_back(vec_json(p));
    obj["peg_outline"] = peg;
    obj["channel_outline"] = channel;
  }
  return json{{"manipulator",
               {{"joint_angles", m.joint_angles},
                {"joint_efforts", m.joint_efforts},
                {"ee_pose",
                 {{"position", vec_json(m.ee_pose.position)},
                  {"orientation", quat_json(m.ee_pose.orientation)}}},
                {"gripper_opening", m.gripper_opening},
                {"links", links}}},
              {"object", obj},
              {"modules", modules},
              {"time", w.time},
              {"rng_seed", w.rng_seed}};
}

// ---------------------------------------------------------------------------
// Rotation profile

double YawProfile::yaw_at(double t) const {
  if (yaw.empty()) throw InvalidArgument("empty yaw profile");
  if (t <= 0.0) return yaw.front();
  const double x = t / dt;
  const std::size_t i = static_cast<std::size_t>(x);
  if (i + 1 >= yaw.size()) return yaw.back();
  const double f = x - static_cast<double>(i);
  return yaw[i] + f * (yaw[i + 1] - yaw[i]);
}

double YawProfile::mean_speed() const {
  if (rate.empty()) return 0.0;
  double s = 0.0;
  for (double r : rate) s += std::abs(r);
  return s / static_cast<double>(rate.size());
}

YawProfile external_rotation_profile(const ObjectSpec& object, double duration,
                                     std::uint64_t seed, const RotationProfileConfig& cfg) {
  object.validate();
  if (!(duration > 0.0)) throw InvalidArgument("rotation profile duration must be positive");
  if (!(cfg.rate_hz > 0 && cfg.amplitude_min > 0 && cfg.amplitude_max >= cfg.amplitude_min &&
        cfg.speed_min > 0 && cfg.speed_max >= cfg.speed_min && cfg.jitter_time > 0)) {
    throw InvalidArgument("invalid rotation profile config");
  }
  std::mt19937_64 rng(derive_seed(seed, "rotation_profile"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  YawProfile prof;
  prof.dt = 1.0 / cfg.rate_hz;
  const std::size_t n = static_cast<std::size_t>(std::floor(duration / prof.dt)) + 1;
  prof.yaw.reserve(n + 8192);
  prof.rate.reserve(n + 8192);
  prof.yaw.push_back(kPi / 2.0);
  prof.rate.push_back(0.0);

  double current = kPi / 2.0;
  double direction = -1.0;  // CW first
  double jitter = 1.0;
  const double k_ou = prof.dt / cfg.jitter_time;
  const double s_ou = cfg.jitter * std::sqrt(2.0 * k_ou);
  std::vector<double> shape;
  while (prof.yaw.size() < n) {
    const double target = kPi / 2.0 + direction * uniform(cfg.amplitude_min, cfg.amplitude_max);
    const double delta = target - current;
    const double speed = uniform(cfg.speed_min, cfg.speed_max);
    const std::size_t steps =
        std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(std::abs(delta) / speed / prof.dt)));
    shape.assign(steps, 0.0);
    double area = 0.0;
    for (std::size_t k = 0; k < steps; ++k) {
      jitter += (1.0 - jitter) * k_ou + s_ou * normal(rng);
      jitter = std::max(jitter, 0.2);
      const double bell = std::sin(kPi * (static_cast<double>(k) + 0.5) / static_cast<double>(steps));
      shape[k] = bell * bell * jitter;
      area += shape[k] * prof.dt;
    }
    for (std::size_t k = 0; k < steps && prof.yaw.size() < n; ++k) {
      const double w = delta * shape[k] / area;
      current += w * prof.dt;
      prof.yaw.push_back(current);
      prof.rate.push_back(w);
    }
    current = prof.yaw.back();
    direction = -direction;
    if (unit(rng) < cfg.pause_probability) {
      const std::size_t pause =
          static_cast<std::size_t>(uniform(0.1, std::max(0.1, cfg.pause_max)) / prof.dt);
      for (std::size_t k = 0; k < pause && prof.yaw.size() < n; ++k) {
        prof.yaw.push_back(current);
        prof.rate.push_back(0.0);
      }
    }
  }
  return prof;
}

// ---------------------------------------------------------------------------
// Rotation trial

json to_json(const TrialPhysics& p) {
  return json{{"backlash", p.backlash},
              {"twist_tilt", p.twist_tilt},
              {"base_pressure", p.base_pressure},
              {"diameter_pressure", p.diameter_pressure},
              {"quadratic_pressure", p.quadratic_pressure},
              {"asymmetry", p.asymmetry},
              {"asymmetry_scale", p.asymmetry_scale},
              {"twist_pressure", p.twist_pressure},
              {"vibration", p.vibration}};
}

TrialPhysics trial_physics_from_json(const json& j) {
  namespace jf = json_fields;
  const std::string where = "trial_physics";
  jf::reject_unknown(j,
                     {"backlash", "twist_tilt", "base_pressure", "diameter_pressure",
                      "quadratic_pressure", "asymmetry", "asymmetry_scale", "twist_pressure",
                      "vibration"},
                     where);
  TrialPhysics p;
  jf::read(j, "backlash", p.backlash, where);
  jf::read(j, "twist_tilt", p.twist_tilt, where);
  jf::read(j, "base_pressure", p.base_pressure, where);
  jf::read(j, "diameter_pressure", p.diameter_pressure, where);
  jf::read(j, "quadratic_pressure", p.quadratic_pressure, where);
  jf::read(j, "asymmetry", p.asymmetry, where);
  jf::read(j, "asymmetry_scale", p.asymmetry_scale, where);
  jf::read(j, "twist_pressure", p.twist_pressure, where);
  jf::read(j, "vibration", p.vibration, where);
  if (p.backlash < 0.0) throw ConfigInvalid("trial_physics.backlash must be >= 0");
  if (!(p.asymmetry_scale > 0.0)) throw ConfigInvalid("trial_physics.asymmetry_scale must be > 0");
  return p;
}

RotationTrial simulate_rotation_trial(const ObjectSpec& cyl, const YawProfile& prof,
                                      const TrialPhysics& ph) {
  if (cyl.kind != ObjectKind::Cylinder) throw InvalidArgument("rotation trials need a cylinder");
  if (prof.yaw.size() < 2 || prof.rate.size() != prof.yaw.size()) {
    throw InvalidArgument("rotation profile too short");
  }
  const std::size_t n = prof.yaw.size();
  RotationTrial tr;
  tr.diameter = cyl.dimensions.x;
  tr.dt = prof.dt;
  tr.angle = prof.yaw;
  tr.angular_rate = prof.rate;
  tr.vibration.resize(n);
  for (int i = 0; i < 2; ++i) {
    tr.pressure[i].resize(n);
    tr.orientation[i].resize(n);
    tr.body_rate[i].resize(n);
  }
  const double half_play = 0.5 * ph.backlash;
  const double base = ph.base_pressure + ph.diameter_pressure * (tr.diameter - 0.065);
  const std::array<Quaternion, 2> mount{Quaternion::identity(), rot_z(kPi)};

  double play = prof.yaw[0] - kPi / 2.0;
  double prev_twist = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double delta = prof.yaw[k] - kPi / 2.0;
    play = std::clamp(play, delta - half_play, delta + half_play);
    const double twist = delta - play;
    const double twist_rate = k == 0 ? 0.0 : (twist - prev_twist) / prof.dt;
    prev_twist = twist;
    const bool slipping = std::abs(twist) >= half_play - 1e-12 && prof.rate[k] != 0.0;
    tr.vibration[k] = slipping ? ph.vibration * std::abs(prof.rate[k]) : 0.0;
    const double lean = ph.asymmetry * ph.asymmetry_scale * std::tanh(delta / ph.asymmetry_scale);
    for (int i = 0; i < 2; ++i) {
      const double side = i == 0 ? 1.0 : -1.0;
      tr.pressure[i][k] = base + ph.quadratic_pressure * delta * delta + side * lean +
                          ph.twist_pressure * std::abs(twist);
      tr.orientation[i][k] = quat_multiply(mount[i], rot_y(side * ph.twist_tilt * twist));
      tr.body_rate[i][k] = {0.0, side * ph.twist_tilt * twist_rate, 0.0};
    }
  }
  return tr;
}

// ---------------------------------------------------------------------------

double sample_uncertain_position(double mu, double sigma, std::mt19937_64& rng) {
  if (!(sigma >= 0.0) || !std::isfinite(mu)) {
    throw InvalidArgument("sample_uncertain_position needs finite mu and sigma >= 0");
  }
  if (sigma == 0.0) return mu;
  std::normal_distribution<double> d(mu, sigma);
  return d(rng);
}

double sample_uncertain_position(double mu, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_uncertain_position(mu, sigma, rng);
}

}  // namespace tactile::sim
