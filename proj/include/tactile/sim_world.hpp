#pragma once

// Deterministic kinematic simulator: a 4-DoF manipulator (base yaw plus three
// pitch joints) carrying two compliant tactile modules on its gripper pads,
// graspable cylinders/cuboids, and peg/hole pairs.
//
// Contact is penetration based. A pad overlapping an object reads
// baro = baseline + k_p * depth (clamped to the saturation count) and its
// module tilts about the contact tangent in proportion to the off-normal
// incidence of the contact. There are no dynamics.

#include <array>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tactile/geometry.hpp"

namespace tactile::sim {

using JointAngles = std::array<double, 4>;

struct Pose {
  Vec3 position;
  Quaternion orientation;
};

// Joint 1 yaws the base about +z. Joints 2-4 are elevations (positive up)
// relative to the previous link, in the vertical plane selected by joint 1.
// All-zero joints stretch the arm horizontally along +x; the end-effector
// frame then coincides with the base axes, offset to
// (l1 + l2 + l3, 0, base_height).
struct ArmConfig {
  double base_height = 0.077;
  std::array<double, 3> links{0.130, 0.124, 0.126};
  JointAngles lower{-2.83, -1.79, -2.5, -2.6};
  JointAngles upper{2.83, 1.57, 2.5, 2.6};
};

struct GripperConfig {
  double pad_thickness = 0.010;  // pad extent along the closing axis
  double pad_height = 0.025;     // vertical extent, centred on the tool point
  double max_opening = 0.060;    // inner gap between pad faces when open
  double peg_squeeze = 0.0005;   // pad depth on a held peg
};

struct TactileConfig {
  double baseline = 10.0;
  double baseline_noise = 1.0;    // half-width of the uniform reading noise
  double saturation = 400.0;
  double saturation_depth = 0.003;
  double tilt_gain = 0.13;        // module tilt (rad) per rad of off-normal incidence
  double contact_stiffness = 2000.0;  // N/m, pad reaction force per metre of depth
  double effort_gain = 1.0;
  double effort_noise = 0.005;    // N·m
  double wall_tilt_gain = 35.0;   // module tilt (rad) per metre of wall penetration

  double pressure_gain() const { return (saturation - baseline) / saturation_depth; }
  double baro_for_depth(double depth) const;
};

struct WorldConfig {
  ArmConfig arm;
  GripperConfig gripper;
  TactileConfig tactile;
};

nlohmann::json to_json(const WorldConfig& config);
/// Strict: unknown keys raise ConfigInvalid.
WorldConfig world_config_from_json(const nlohmann::json& j);

struct ManipulatorState {
  JointAngles joint_angles{};
  JointAngles joint_efforts{};
  Pose ee_pose;
  double gripper_opening = 0.060;
};

/// End-effector pose; throws JointLimit when an angle is outside its range.
Pose forward_kinematics(const JointAngles& joints, const ArmConfig& arm = {});

/// A joint solution within limits reaching `target`, if one exists. The target
/// orientation must be reachable by a 4-DoF arm (tool y axis horizontal and the
/// tool point in the plane selected by the base yaw). With `prefer`, the elbow
/// branch closest to it is chosen; otherwise elbow-up.
std::optional<JointAngles> inverse_kinematics(const Pose& target, const ArmConfig& arm = {},
                                              const JointAngles* prefer = nullptr);

/// Base, shoulder, elbow, wrist and tool points for drawing.
std::array<Vec3, 5> link_points(const JointAngles& joints, const ArmConfig& arm = {});

ManipulatorState make_manipulator(const JointAngles& joints, double gripper_opening,
                                  const ArmConfig& arm = {});

/// Tool orientation pointing the gripper straight down with the given base yaw.
Quaternion downward_tool(double base_yaw);

enum class ObjectKind { Cylinder, Cuboid, Peg };
enum class PegProfile { Vertical, Slanted, Curved };

std::string to_string(ObjectKind kind);
std::string to_string(PegProfile profile);
PegProfile peg_profile_from_string(const std::string& name);

struct PegGeometry {
  double hole_depth = 0.07;      // vertical depth of the channel below the mouth
  double clearance = 0.002;      // radial play per side
  double peg_diameter = 0.020;
  double slant = 15.0 * kPi / 180.0;
  double arc_radius = 0.20;
  double protrusion = 0.04;      // straight section above the mouth when seated
  double grasp_offset = 0.02;    // grasp point distance above the mouth
};

inline constexpr std::array<double, 3> kReplicationDiameters{0.057, 0.065, 0.080};

struct ObjectSpec {
  ObjectKind kind = ObjectKind::Cuboid;
  Vec3 dimensions{0.03, 0.03, 0.06};  // cylinder: (d, d, h); cuboid: (x, y, z); peg: (d, d, length)
  std::optional<PegProfile> peg_profile;
  PegGeometry peg;
  Vec3 hole_position;                 // mouth centre, pegs only
  double placement_yaw = 0.0;         // rad; pegs: azimuth of the hole's bend plane

  static ObjectSpec cylinder(double diameter, double height = 0.10);
  static ObjectSpec cuboid(const Vec3& size);
  /// The hole sits at `radius` from the arm base along `placement_yaw`, so the
  /// bend plane of slanted/curved channels contains the arm's radial direction.
  static ObjectSpec peg_in_hole(PegProfile profile, double placement_yaw,
                                const PegGeometry& geometry = {}, double radius = 0.26,
                                double mouth_height = 0.04);

  /// Throws InvalidArgument on inconsistent fields.
  void validate() const;
};

nlohmann::json to_json(const ObjectSpec& spec);

struct TactileModuleState {
  double baro = 10.0;
  Quaternion orientation;  // module frame w.r.t. the base
  Vec3 contact_normal;     // unit, pointing from the object into the pad; zero without contact
  double depth = 0.0;      // penetration (m)
  double incidence = 0.0;  // angle between pad normal and contact normal (rad)
  bool in_contact = false;
  Vec3 reaction_force;     // force on the pad (N)
};

using ModulePair = std::array<TactileModuleState, 2>;

struct WorldState {
  ManipulatorState manipulator;
  ObjectSpec object;
  // Cylinder/cuboid: bottom-centre position and yaw about z. Peg: rigid
  // displacement from the seated pose, rotation taken about the seated grasp point.
  Pose object_pose;
  ModulePair modules{};
  double time = 0.0;
  std::uint64_t rng_seed = 0;
};

/// Scene snapshot: self-contained, deterministic serialization.
nlohmann::json to_json(const WorldState& world, const WorldConfig& config = {});

/// Closing axis of the gripper (the tool's y axis). Module 0 sits on the
/// negative side and faces +axis, module 1 the positive side facing -axis.
Vec3 closing_axis(const Pose& tool);

/// Mounting orientation of each module for a tool pose, before contact tilt.
Quaternion module_mount(const Pose& tool, int module);

/// Noise-free contact state of both modules.
ModulePair compute_contact(const WorldState& world, const WorldConfig& config = {});

/// Joint torques from the pad reaction forces via the position Jacobian.
JointAngles contact_efforts(const WorldState& world, const ModulePair& modules,
                            const WorldConfig& config = {});

// ---------------------------------------------------------------------------
// Peg / hole geometry

struct WallContact {
  double excess = 0.0;  // deepest penetration beyond the clearance (m), 0 if free
  Vec3 normal;          // wall normal at the deepest point, pointing into the channel
  bool inside = false;  // any part of the peg below the mouth
};

class PegHole {
 public:
  explicit PegHole(const ObjectSpec& spec, int samples = 48);

  /// Seated tool pose: at the grasp point, level, yawed along the bend plane.
  Pose seated_tool() const;
  /// Peg centreline in world coordinates after a rigid displacement.
  std::vector<Vec3> peg_points(const Pose& displacement) const;
  WallContact wall_contact(const Pose& displacement) const;
  /// Height of the lowest peg point above the mouth (negative while inside).
  double bottom_height(const Pose& displacement) const;
  /// Channel centreline (world coordinates), mouth first.
  std::vector<Vec3> channel_points() const;

  /// Displacement of the peg implied by moving the tool from its seated pose.
  Pose displacement_for(const Pose& tool) const;

 private:
  Vec3 to_world(double u, double v, double z) const;
  // distance in the bend plane from (u, z) to the channel centreline
  double channel_distance(double u, double z, double* nu, double* nz) const;

  ObjectSpec spec_;
  PegProfile profile_;
  std::vector<Vec3> seated_local_;  // peg centreline in hole coordinates (u, v, z)
  Vec3 grasp_local_;
  double arc_end_ = 0.0;  // curved: end parameter of the channel arc
};

// ---------------------------------------------------------------------------
// External rotation of a grasped object

struct RotationProfileConfig {
  double rate_hz = 1000.0;
  double amplitude_min = 0.2;  // rad, excursion from the reference on each side
  double amplitude_max = 0.5;
  double speed_min = 0.15;     // rad/s, mean speed of a single sweep
  double speed_max = 0.40;
  double jitter = 0.25;        // relative std of the operator's speed fluctuation
  double jitter_time = 0.2;    // s, correlation time of the fluctuation
  double pause_probability = 0.2;
  double pause_max = 0.5;      // s
};

struct YawProfile {
  double dt = 1e-3;
  std::vector<double> yaw;   // rad, starts at the π/2 reference
  std::vector<double> rate;  // rad/s

  double duration() const { return dt * static_cast<double>(yaw.empty() ? 0 : yaw.size() - 1); }
  double yaw_at(double t) const;
  double mean_speed() const;
};

/// Smooth alternating CW/CCW sweeps about the 90° reference with seeded
/// fluctuations of the angular velocity.
YawProfile external_rotation_profile(const ObjectSpec& object, double duration,
                                     std::uint64_t seed,
                                     const RotationProfileConfig& config = {});

struct TrialPhysics {
  double backlash = 0.06;          // rad of object rotation absorbed before slip
  double twist_tilt = 1.5;         // module tilt per rad of twist
  double base_pressure = 150.0;    // counts at the 65 mm reference diameter
  double diameter_pressure = 400.0;   // counts per metre of diameter change
  double quadratic_pressure = 150.0;  // counts per rad² of rotation
  double asymmetry = 80.0;         // counts per rad near the reference, opposite sign per module
  double asymmetry_scale = 0.1;    // rad; the lean saturates at asymmetry * asymmetry_scale
  double twist_pressure = 60.0;    // counts per rad of |twist|
  double vibration = 0.6;          // m/s² per rad/s while slipping
};

nlohmann::json to_json(const TrialPhysics& physics);
TrialPhysics trial_physics_from_json(const nlohmann::json& j);

/// Dense noise-free physical trace of a grasped cylinder under external
/// rotation, sampled on the profile's grid.
struct RotationTrial {
  double diameter = 0.065;
  double dt = 1e-3;
  std::vector<double> angle;
  std::vector<double> angular_rate;
  std::array<std::vector<double>, 2> pressure;
  std::array<std::vector<Quaternion>, 2> orientation;
  std::array<std::vector<Vec3>, 2> body_rate;
  std::vector<double> vibration;  // accelerometer vibration amplitude (m/s²)

  std::size_t size() const { return angle.size(); }
  double duration() const { return dt * static_cast<double>(size() ? size() - 1 : 0); }
};

RotationTrial simulate_rotation_trial(const ObjectSpec& cylinder, const YawProfile& profile,
                                      const TrialPhysics& physics = {});

// ---------------------------------------------------------------------------
// Positional uncertainty of an object estimate

/// One draw from N(mu, sigma²). sigma == 0 returns mu.
double sample_uncertain_position(double mu, double sigma, std::mt19937_64& rng);
double sample_uncertain_position(double mu, double sigma, std::uint64_t seed);

}  // namespace tactile::sim
