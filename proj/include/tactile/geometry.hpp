#pragma once

// Quaternion algebra, frame transforms and the Madgwick IMU orientation filter.
//
// Conventions: Hamilton product, right-handed frames, scalar-first storage.
// A quaternion q maps vectors from a body frame into the reference frame:
// v_ref = q * v_body * q^-1.
//
// Euler angles use the x-y'-z'' (Cardan) sequence: q = Rx(roll) * Ry(pitch) * Rz(yaw).

#include <array>
#include <cmath>

namespace tactile {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  constexpr Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const;
  bool is_finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
};

inline constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }

struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static constexpr Quaternion identity() { return {1.0, 0.0, 0.0, 0.0}; }

  double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quaternion normalized() const;
  constexpr Quaternion conjugate() const { return {w, -x, -y, -z}; }
  constexpr Vec3 vector() const { return {x, y, z}; }
  constexpr bool operator==(const Quaternion&) const = default;
};

/// Rotation by `angle` radians about `axis` (need not be unit length).
Quaternion axis_angle(const Vec3& axis, double angle);

/// Raw Hamilton product without renormalization.
Quaternion hamilton(const Quaternion& a, const Quaternion& b);

/// Hamilton product a ⊗ b, renormalized.
Quaternion quat_multiply(const Quaternion& a, const Quaternion& b);

Quaternion quat_inverse(const Quaternion& q);

/// Change of orientation between consecutive samples: q_t ⊗ q_prev⁻¹.
Quaternion quat_delta(const Quaternion& q_t, const Quaternion& q_prev);

Vec3 rotate(const Quaternion& q, const Vec3& v);

/// Rotation angle in [0, π] of a unit quaternion (sign-invariant).
double rotation_angle(const Quaternion& q);

/// Angle of the relative rotation taking `a` to `b`.
double angle_between(const Quaternion& a, const Quaternion& b);

/// Component-wise distance, sign-invariant (q and -q are the same rotation).
double quat_distance(const Quaternion& a, const Quaternion& b);

using RotationMatrix = std::array<std::array<double, 3>, 3>;

RotationMatrix to_matrix(const Quaternion& q);
Quaternion from_matrix(const RotationMatrix& m);

struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  bool gimbal_lock = false;

  Vec3 as_vec() const { return {roll, pitch, yaw}; }
};

/// Roll/pitch/yaw of q. When |pitch| is within 1e-6 of π/2 the decomposition
/// is degenerate: `gimbal_lock` is set, roll is fixed to 0 and yaw absorbs
/// the remaining rotation. yaw ∈ (−π, π].
EulerAngles quat_to_euler(const Quaternion& q);
Quaternion euler_to_quat(double roll, double pitch, double yaw);

/// Wraps an angle into (−π, π].
double wrap_angle(double a);

struct FilterState {
  Quaternion q = Quaternion::identity();
  double beta = 0.1;
  double last_update = 0.0;
};

/// One Madgwick IMU step: gyro quaternion derivative minus the β-scaled,
/// normalized gradient of the gravity-alignment objective. A zero
/// accelerometer vector skips the correction and integrates the gyro only.
/// Gyro in rad/s (body frame), accel in any consistent unit (body frame).
FilterState madgwick_update(const FilterState& state, const Vec3& gyro, const Vec3& accel,
                            double dt);

}  // namespace tactile
