#pragma once

#include "deformcap/aabb.h"
#include "deformcap/camera.h"
#include "deformcap/mesh.h"
#include "deformcap/rotation.h"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

namespace testing {

using deformcap::Matrix3d;
using deformcap::Vector3d;

inline Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vector3d v;
  do {
    v = Vector3d(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Matrix3d random_rotation(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 3.0);
  return deformcap::axis_angle_to_matrix(random_unit(rng) * u(rng));
}

/// Central differences of a vector function.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd j(f0.size(), x.size());
  for (int c = 0; c < x.size(); ++c) {
    Eigen::VectorXd xp = x;
    Eigen::VectorXd xm = x;
    xp[c] += h;
    xm[c] -= h;
    j.col(c) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return j;
}

/// max |a - b| / max(|b|_max, floor)
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-8) {
  const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

/// Nearest hit over every triangle, ties to the lower face index.
inline std::optional<deformcap::RayHit> brute_first_hit(const deformcap::TriMesh& mesh, const Vector3d& o,
                                                         const Vector3d& d) {
  std::optional<deformcap::RayHit> best;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& tri = mesh.faces[f];
    auto hit = deformcap::intersect_triangle(o, d, mesh.vertices[tri[0]], mesh.vertices[tri[1]],
                                             mesh.vertices[tri[2]]);
    if (!hit || hit->t <= 0.0) continue;
    if (!best || hit->t < best->t) {
      hit->face = static_cast<int>(f);
      best = hit;
    }
  }
  return best;
}

/// Simple look-at camera with square pixels.
inline deformcap::CameraParams look_at_camera(const Vector3d& eye, const Vector3d& target, double focal,
                                              int width, int height, int id = 0) {
  deformcap::CameraParams cam;
  cam.id = id;
  const Vector3d z = (target - eye).normalized();
  Vector3d up(0.0, -1.0, 0.0);
  if (std::abs(z.dot(up)) > 0.99) up = Vector3d(0.0, 0.0, 1.0);
  const Vector3d x = up.cross(z).normalized();
  const Vector3d y = z.cross(x);
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = z.transpose();
  cam.T = -cam.R * eye;
  cam.K << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("deformcap_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace testing
