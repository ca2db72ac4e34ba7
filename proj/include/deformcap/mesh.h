#pragma once

#include "deformcap/rotation.h"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace deformcap {

using Eigen::Vector3i;

/// Indexed triangle mesh in millimeters.
struct TriMesh {
  std::vector<Vector3d> vertices;
  std::vector<Vector3i> faces;
  std::vector<Vector3d> normals;

  std::size_t vertex_count() const {
    return vertices.size();
  }
  std::size_t face_count() const {
    return faces.size();
  }

  /// Area-weighted average of incident face normals, normalized. Vertices
  /// without incident area keep a zero normal.
  void compute_normals();
};

struct Aabb {
  Vector3d min = Vector3d::Constant(std::numeric_limits<double>::infinity());
  Vector3d max = Vector3d::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Vector3d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  void extend(const Aabb& other) {
    min = min.cwiseMin(other.min);
    max = max.cwiseMax(other.max);
  }
  bool empty() const {
    return (min.array() > max.array()).any();
  }
  bool contains(const Aabb& other, double tol = 0.0) const {
    return (other.min.array() >= min.array() - tol).all() &&
        (other.max.array() <= max.array() + tol).all();
  }
  Vector3d center() const {
    return 0.5 * (min + max);
  }
  Vector3d extent() const {
    return max - min;
  }
};

Aabb bounding_box(const TriMesh& mesh);

/// Undirected edge with the smaller index first.
using Edge = std::pair<int, int>;

struct EdgeReport {
  std::size_t edge_count = 0;
  /// Edges not shared by exactly two faces, with their face count.
  std::vector<std::pair<Edge, int>> non_manifold;
};

EdgeReport analyze_edges(const TriMesh& mesh);

/// V - E + F.
long euler_characteristic(const TriMesh& mesh);

bool is_watertight(const TriMesh& mesh);

/// Throws InputError listing (up to a few) violating edges. `what` names
/// the mesh in the message.
void require_watertight(const TriMesh& mesh, const char* what);

/// Rigid transform v -> R v + t; normals rotated.
TriMesh transformed(const TriMesh& mesh, const Matrix3d& rotation, const Vector3d& translation);

/// Unit-normal face normal (zero for degenerate faces).
Vector3d face_normal(const TriMesh& mesh, std::size_t face);

/// Signed volume via the divergence theorem (mm^3); positive for
/// outward-oriented closed meshes.
double signed_volume(const TriMesh& mesh);

/// Subdivided icosahedron projected onto a sphere. Level L has
/// 10 * 4^L + 2 vertices.
TriMesh make_icosphere(double radius, int subdivisions, const Vector3d& center = Vector3d::Zero());

/// Closed capsule between `a` and `b`: a cylinder with hemispherical caps,
/// one vertex at each pole.
TriMesh make_capsule(const Vector3d& a, const Vector3d& b, double radius, int segments = 24,
                     int cap_rings = 6, int body_rings = 4);

/// Axis-aligned box as 12 outward-facing triangles.
TriMesh make_box(const Vector3d& min, const Vector3d& max);

/// Concatenates meshes (no welding).
TriMesh merge_meshes(const std::vector<TriMesh>& meshes);

} // namespace deformcap
