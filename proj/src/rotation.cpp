#include "deformcap/rotation.h"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace deformcap {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
} // namespace

Matrix3d skew(const Vector3d& v) {
  Matrix3d s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

Matrix3d axis_angle_to_matrix(const Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    // First-order expansion; exact identity at zero.
    return Matrix3d::Identity() + skew(axis_angle);
  }
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Vector3d matrix_to_axis_angle(const Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  Vector3d v = aa.axis() * aa.angle();
  return canonicalize_axis_angle(v);
}

std::array<Matrix3d, 3> axis_angle_derivatives(const Vector3d& v) {
  std::array<Matrix3d, 3> d;
  const double sq = v.squaredNorm();
  if (sq < 1e-16) {
    for (int i = 0; i < 3; ++i) {
      d[i] = skew(Vector3d::Unit(i));
    }
    return d;
  }
  // dR/dv_i = (v_i [v]x + [v x (I - R) e_i]x) R / |v|^2
  const Matrix3d rot = axis_angle_to_matrix(v);
  const Matrix3d id_minus_r = Matrix3d::Identity() - rot;
  for (int i = 0; i < 3; ++i) {
    const Vector3d col = v.cross(id_minus_r.col(i));
    d[i] = (v[i] * skew(v) + skew(col)) * rot / sq;
  }
  return d;
}

Vector3d canonicalize_axis_angle(const Vector3d& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle <= std::numbers::pi || !std::isfinite(angle)) {
    return axis_angle;
  }
  const Vector3d axis = axis_angle / angle;
  double wrapped = std::fmod(angle, kTwoPi);
  if (wrapped > std::numbers::pi) {
    wrapped -= kTwoPi;
  }
  return axis * wrapped;
}

Vector3d nearest_axis_angle(const Vector3d& axis_angle, const Vector3d& reference) {
  const double angle = axis_angle.norm();
  if (angle < 1e-12) {
    return axis_angle;
  }
  const Vector3d axis = axis_angle / angle;
  Vector3d best = axis_angle;
  double best_dist = (axis_angle - reference).squaredNorm();
  for (int k = -2; k <= 2; ++k) {
    if (k == 0) continue;
    const Vector3d candidate = axis * (angle + k * kTwoPi);
    const double dist = (candidate - reference).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = candidate;
    }
  }
  return best;
}

double rotation_angle_between(const Matrix3d& a, const Matrix3d& b) {
  const Matrix3d rel = a.transpose() * b;
  const double c = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
  return std::acos(c);
}

} // namespace deformcap
