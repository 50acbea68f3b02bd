#include "tactile/geometry.hpp"

#include <algorithm>

#include "tactile/errors.hpp"

namespace tactile {

Vec3 Vec3::normalized() const {
  const double n = norm();
  if (n == 0.0) return *this;
  return *this / n;
}

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n == 0.0) return identity();
  return {w / n, x / n, y / n, z / n};
}

Quaternion axis_angle(const Vec3& axis, double angle) {
  const Vec3 u = axis.normalized();
  const double s = std::sin(0.5 * angle);
  return Quaternion{std::cos(0.5 * angle), u.x * s, u.y * s, u.z * s}.normalized();
}

Quaternion hamilton(const Quaternion& a, const Quaternion& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quaternion quat_multiply(const Quaternion& a, const Quaternion& b) {
  return hamilton(a, b).normalized();
}

Quaternion quat_inverse(const Quaternion& q) {
  const double n2 = q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z;
  if (n2 == 0.0) return Quaternion::identity();
  return Quaternion{q.w / n2, -q.x / n2, -q.y / n2, -q.z / n2}.normalized();
}

Quaternion quat_delta(const Quaternion& q_t, const Quaternion& q_prev) {
  return quat_multiply(q_t, quat_inverse(q_prev));
}

Vec3 rotate(const Quaternion& q, const Vec3& v) {
  // v' = v + 2w(u × v) + 2u × (u × v), u the vector part
  const Vec3 u = q.vector();
  const Vec3 t = u.cross(v) * 2.0;
  return v + t * q.w + u.cross(t);
}

double rotation_angle(const Quaternion& q) {
  const Quaternion n = q.normalized();
  const double v = n.vector().norm();
  return 2.0 * std::atan2(v, std::abs(n.w));
}

double angle_between(const Quaternion& a, const Quaternion& b) {
  return rotation_angle(hamilton(quat_inverse(a), b));
}

double quat_distance(const Quaternion& a, const Quaternion& b) {
  auto dist = [](const Quaternion& p, const Quaternion& q, double s) {
    const double dw = p.w - s * q.w, dx = p.x - s * q.x, dy = p.y - s * q.y, dz = p.z - s * q.z;
    return std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  };
  return std::min(dist(a, b, 1.0), dist(a, b, -1.0));
}

RotationMatrix to_matrix(const Quaternion& q_in) {
  const Quaternion q = q_in.normalized();
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
           {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
           {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Quaternion from_matrix(const RotationMatrix& m) {
  const double trace = m[0][0] + m[1][1] + m[2][2];
  Quaternion q;
  if (trace > 0.0) {
    const double s = 0.5 / std::sqrt(trace + 1.0);
    q = {0.25 / s, (m[2][1] - m[1][2]) * s, (m[0][2] - m[2][0]) * s, (m[1][0] - m[0][1]) * s};
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]);
    q = {(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s};
  } else if (m[1][1] > m[2][2]) {
    const double s = 2.0 * std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]);
    q = {(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]);
    q = {(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s};
  }
  q = q.normalized();
  if (q.w < 0.0) q = {-q.w, -q.x, -q.y, -q.z};
  return q;
}

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

EulerAngles quat_to_euler(const Quaternion& q) {
  // R = Rx(r) Ry(p) Rz(y):
  //   R02 = sin p, R12 = -sin r cos p, R22 = cos r cos p,
  //   R01 = -cos p sin y, R00 = cos p cos y
  const RotationMatrix m = to_matrix(q);
  EulerAngles e;
  const double cp = std::hypot(m[0][0], m[0][1]);
  e.pitch = std::atan2(m[0][2], cp);
  if (kPi / 2.0 - std::abs(e.pitch) < 1e-6) {
    e.gimbal_lock = true;
    e.roll = 0.0;
    // with roll = 0: R10 = sin y, R11 = cos y
    e.yaw = wrap_angle(std::atan2(m[1][0], m[1][1]));
    return e;
  }
  e.roll = wrap_angle(std::atan2(-m[1][2], m[2][2]));
  e.yaw = wrap_angle(std::atan2(-m[0][1], m[0][0]));
  return e;
}

Quaternion euler_to_quat(double roll, double pitch, double yaw) {
  const Quaternion qx = axis_angle({1, 0, 0}, roll);
  const Quaternion qy = axis_angle({0, 1, 0}, pitch);
  const Quaternion qz = axis_angle({0, 0, 1}, yaw);
  return quat_multiply(quat_multiply(qx, qy), qz);
}

FilterState madgwick_update(const FilterState& state, const Vec3& gyro, const Vec3& accel,
                            double dt) {
  if (!(dt > 0.0)) throw InvalidArgument("madgwick_update requires dt > 0");
  if (state.beta < 0.0) throw InvalidArgument("filter gain beta must be non-negative");

  const Quaternion& q = state.q;
  // rate of change from the gyroscope: ½ q ⊗ (0, ω)
  Quaternion q_dot = hamilton(q, Quaternion{0.0, gyro.x, gyro.y, gyro.z});
  q_dot = {0.5 * q_dot.w, 0.5 * q_dot.x, 0.5 * q_dot.y, 0.5 * q_dot.z};

  const double a_norm = accel.norm();
  if (a_norm > 0.0 && state.beta > 0.0) {
    const Vec3 a = accel / a_norm;
    // objective: gravity (0,0,1) expressed in the body frame minus the measurement
    const double f1 = 2.0 * (q.x * q.z - q.w * q.y) - a.x;
    const double f2 = 2.0 * (q.w * q.x + q.y * q.z) - a.y;
    const double f3 = 2.0 * (0.5 - q.x * q.x - q.y * q.y) - a.z;
    // gradient Jᵀ f
    double s0 = -2.0 * q.y * f1 + 2.0 * q.x * f2;
    double s1 = 2.0 * q.z * f1 + 2.0 * q.w * f2 - 4.0 * q.x * f3;
    double s2 = -2.0 * q.w * f1 + 2.0 * q.z * f2 - 4.0 * q.y * f3;
    double s3 = 2.0 * q.x * f1 + 2.0 * q.y * f2;
    const double s_norm = std::sqrt(s0 * s0 + s1 * s1 + s2 * s2 + s3 * s3);
    if (s_norm > 0.0) {
      s0 /= s_norm;
      s1 /= s_norm;
      s2 /= s_norm;
      s3 /= s_norm;
      q_dot.w -= state.beta * s0;
      q_dot.x -= state.beta * s1;
      q_dot.y -= state.beta * s2;
      q_dot.z -= state.beta * s3;
    }
  }

  FilterState next = state;
  next.q = Quaternion{q.w + q_dot.w * dt, q.x + q_dot.x * dt, q.y + q_dot.y * dt,
                      q.z + q_dot.z * dt}
               .normalized();
  next.last_update = state.last_update + dt;
  return next;
}

}  // namespace tactile
