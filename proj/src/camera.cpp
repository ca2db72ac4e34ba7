#include "deformcap/camera.h"

#include "deformcap/errors.h"

#include <cmath>
#include <string>

namespace deformcap {

Vector2d CameraParams::project(const Vector3d& world) const {
  const Vector3d h = K * to_camera(world);
  return {h.x() / h.z(), h.y() / h.z()};
}

Eigen::Matrix<double, 2, 3> CameraParams::projection_jacobian(const Vector3d& world) const {
  const Vector3d h = K * to_camera(world);
  const double inv_z = 1.0 / h.z();
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << inv_z, 0.0, -h.x() * inv_z * inv_z, 0.0, inv_z, -h.y() * inv_z * inv_z;
  return dpi * K * R;
}

Vector3d CameraParams::pixel_ray(const Vector2d& uv) const {
  const Vector3d dir_cam = K.inverse() * Vector3d(uv.x(), uv.y(), 1.0);
  return (R.transpose() * dir_cam).normalized();
}

CameraParams CameraParams::scaled(double scale) const {
  CameraParams out = *this;
  out.K(0, 0) *= scale;
  out.K(0, 1) *= scale;
  out.K(1, 1) *= scale;
  // Pixel centers at integer coordinates: x' = (x + 0.5) * s - 0.5.
  out.K(0, 2) = (K(0, 2) + 0.5) * scale - 0.5;
  out.K(1, 2) = (K(1, 2) + 0.5) * scale - 0.5;
  out.width = static_cast<int>(std::lround(width * scale));
  out.height = static_cast<int>(std::lround(height * scale));
  return out;
}

void CameraParams::validate() const {
  const std::string where = "camera " + std::to_string(id) + ": ";
  if (!K.allFinite() || !R.allFinite() || !T.allFinite()) {
    throw InputError(where + "non-finite entries in K/R/T");
  }
  const double ortho_err = (R * R.transpose() - Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-6) {
    throw InputError(where + "field R: rotation not orthonormal (error " +
                     std::to_string(ortho_err) + ")");
  }
  if (std::abs(R.determinant() - 1.0) > 1e-6) {
    throw InputError(where + "field R: rotation not proper (det " +
                     std::to_string(R.determinant()) + ")");
  }
  if (K(1, 0) != 0.0 || K(2, 0) != 0.0 || K(2, 1) != 0.0) {
    throw InputError(where + "field K: intrinsics not upper-triangular");
  }
  if (!(K(0, 0) > 0.0) || !(K(1, 1) > 0.0) || K(2, 2) != 1.0) {
    throw InputError(where + "field K: focal entries must be positive and K[2][2] = 1");
  }
  if (width <= 0 || height <= 0) {
    throw InputError(where + "field width/height: image size must be positive");
  }
}

const CameraParams& camera_by_id(std::span<const CameraParams> cams, int id) {
  for (const auto& cam : cams) {
    if (cam.id == id) {
      return cam;
    }
  }
  throw InputError("no camera with id " + std::to_string(id));
}

} // namespace deformcap
