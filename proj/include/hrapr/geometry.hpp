#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "hrapr/errors.hpp"

namespace hrapr {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;

namespace detail {

// Quaternions whose norm is this close to 1 are left unscaled so that
// normalizing a stored unit quaternion is bit-for-bit idempotent.
inline constexpr double kUnitNormSlack = 1e-12;

inline void canonicalize_sign(Quat& q) {
  bool flip = false;
  if (q.w() != 0.0) {
    flip = q.w() < 0.0;
  } else if (q.x() != 0.0) {
    flip = q.x() < 0.0;
  } else if (q.y() != 0.0) {
    flip = q.y() < 0.0;
  } else {
    flip = q.z() < 0.0;
  }
  if (flip) q.coeffs() = -q.coeffs();
  // Avoid -0.0 so text records are stable.
  for (int i = 0; i < 4; ++i) {
    if (q.coeffs()[i] == 0.0) q.coeffs()[i] = 0.0;
  }
}

}  // namespace detail

/// Unit quaternion with w >= 0 (ties broken on the first nonzero of x, y, z).
/// Throws InvalidQuaternion on a zero or non-finite input.
inline Quat quat_normalize(double w, double x, double y, double z) {
  Quat q(w, x, y, z);
  const double n = q.norm();
  if (!std::isfinite(n)) throw InvalidQuaternion("quaternion has non-finite components");
  if (n == 0.0) throw InvalidQuaternion("quaternion has zero norm");
  if (std::abs(n - 1.0) > detail::kUnitNormSlack) q.coeffs() /= n;
  detail::canonicalize_sign(q);
  return q;
}

inline Quat quat_normalize(const Quat& q) { return quat_normalize(q.w(), q.x(), q.y(), q.z()); }

/// Rotation of `angle` radians about `axis` (need not be unit length).
inline Quat axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0 || angle == 0.0) return Quat::Identity();
  return Quat(Eigen::AngleAxisd(angle, axis / n));
}

/// Rotation vector (axis * angle, radians) to quaternion, stable for tiny angles.
inline Quat exp_map(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  const double half = 0.5 * angle;
  // sin(x)/x series below the point where it loses precision.
  const double k = angle < 1e-8 ? 0.5 - angle * angle / 48.0 : std::sin(half) / angle;
  return Quat(std::cos(half), k * rotvec.x(), k * rotvec.y(), k * rotvec.z());
}

// Camera pose: translation in meters plus a canonical unit quaternion.
class Pose {
 public:
  Pose() : t_(Vec3::Zero()), q_(Quat::Identity()) {}
  Pose(const Vec3& t, const Quat& q) : t_(t), q_(quat_normalize(q)) {}

  static Pose from_array(const std::array<double, 7>& v) {
    return Pose(Vec3(v[0], v[1], v[2]), Quat(v[3], v[4], v[5], v[6]));
  }

  const Vec3& translation() const noexcept { return t_; }
  const Quat& rotation() const noexcept { return q_; }

  // (tx, ty, tz, qw, qx, qy, qz)
  std::array<double, 7> to_array() const {
    return {t_.x(), t_.y(), t_.z(), q_.w(), q_.x(), q_.y(), q_.z()};
  }

  Pose with_translation(const Vec3& t) const { return Pose(t, q_); }

  // Right-multiplies a small body-frame rotation, i.e. q <- q * exp(rotvec).
  Pose rotated_body(const Vec3& rotvec) const { return Pose(t_, q_ * exp_map(rotvec)); }

  friend bool operator==(const Pose& a, const Pose& b) {
    return a.t_ == b.t_ && a.q_.coeffs() == b.q_.coeffs();
  }

 private:
  Vec3 t_;
  Quat q_;
};

struct PoseError {
  double trans_m = 0.0;
  double rot_deg = 0.0;
};

inline double trans_error(const Pose& pred, const Pose& gt) {
  return (pred.translation() - gt.translation()).norm();
}

/// Geodesic angle between the two rotations in degrees, in [0, 180].
/// Equal to 2*acos(|<q_pred, q_gt>|); evaluated through atan2 of the relative
/// rotation so that small angles keep full precision.
inline double rot_error(const Pose& pred, const Pose& gt) {
  const Quat rel = pred.rotation().conjugate() * gt.rotation();
  const double s = rel.vec().norm();
  const double c = std::abs(rel.w());
  return std::min(180.0, 2.0 * std::atan2(s, c) * kRadToDeg);
}

inline PoseError pose_error(const Pose& pred, const Pose& gt) {
  return {trans_error(pred, gt), rot_error(pred, gt)};
}

/// Linear translation, shorter-arc spherical rotation. s = 0 gives a, s = 1 gives b.
inline Pose slerp(const Pose& a, const Pose& b, double s) {
  if (s <= 0.0) return a;
  if (s >= 1.0) return b;
  const Vec3 t = (1.0 - s) * a.translation() + s * b.translation();
  return Pose(t, a.rotation().slerp(s, b.rotation()));
}

}  // namespace hrapr
