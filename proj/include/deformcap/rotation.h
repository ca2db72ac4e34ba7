#pragma once

#include <Eigen/Dense>

#include <array>

namespace deformcap {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

/// Rodrigues' formula. Exact identity for the zero vector.
Matrix3d axis_angle_to_matrix(const Vector3d& axis_angle);

/// Inverse of axis_angle_to_matrix; the result has magnitude in [0, pi].
Vector3d matrix_to_axis_angle(const Matrix3d& rotation);

/// Partial derivatives dR/dv_i of the exponential map at v.
std::array<Matrix3d, 3> axis_angle_derivatives(const Vector3d& axis_angle);

/// Maps an axis-angle vector onto the equivalent one with magnitude <= pi.
Vector3d canonicalize_axis_angle(const Vector3d& axis_angle);

/// Among the 2*pi-periodic representations of the same rotation, returns
/// the one closest to `reference`.
Vector3d nearest_axis_angle(const Vector3d& axis_angle, const Vector3d& reference);

/// Geodesic angle (radians) between two rotations.
double rotation_angle_between(const Matrix3d& a, const Matrix3d& b);

Matrix3d skew(const Vector3d& v);

} // namespace deformcap
