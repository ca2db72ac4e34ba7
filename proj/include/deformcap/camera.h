#pragma once

#include "deformcap/rotation.h"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace deformcap {

/// Ideal pinhole camera. World points map to the camera frame as R*p + T
/// (millimeters); pixel centers sit at integer coordinates.
struct CameraParams {
  int id = 0;
  Matrix3d K = Matrix3d::Identity();
  Matrix3d R = Matrix3d::Identity();
  Vector3d T = Vector3d::Zero();
  int width = 0;
  int height = 0;

  Vector3d to_camera(const Vector3d& world) const {
    return R * world + T;
  }

  /// Full pinhole projection pi(K(R p + T)).
  Vector2d project(const Vector3d& world) const;

  /// d project / d world, 2x3.
  Eigen::Matrix<double, 2, 3> projection_jacobian(const Vector3d& world) const;

  /// Camera center in world coordinates.
  Vector3d center() const {
    return -R.transpose() * T;
  }

  /// Unit world-space direction of the ray through pixel `uv`.
  Vector3d pixel_ray(const Vector2d& uv) const;

  /// Camera for an image resampled by `scale` (e.g. 0.25 for quarter size).
  CameraParams scaled(double scale) const;

  /// Throws InputError naming the view and field on invariant violation.
  void validate() const;
};

const CameraParams& camera_by_id(std::span<const CameraParams> cams, int id);

} // namespace deformcap
