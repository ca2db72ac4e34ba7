#pragma once

#include "deformcap/mesh.h"

#include <array>
#include <optional>
#include <vector>

namespace deformcap {

struct RayHit {
  double t = 0.0;
  int face = -1;
  /// Barycentric coordinates of the hit (weights of vertices 1 and 2).
  double u = 0.0;
  double v = 0.0;
};

struct ClosestPointResult {
  Vector3d point = Vector3d::Zero();
  double distance = 0.0;
  int face = -1;
};

/// Ray/triangle intersection (Moller-Trumbore), inclusive edges. `grazing`
/// is set when the hit lies within a relative epsilon of an edge or the
/// ray is nearly parallel to the triangle plane.
std::optional<RayHit> intersect_triangle(const Vector3d& origin, const Vector3d& dir,
                                         const Vector3d& a, const Vector3d& b, const Vector3d& c,
                                         bool* grazing = nullptr);

Vector3d closest_point_on_triangle(const Vector3d& p, const Vector3d& a, const Vector3d& b,
                                   const Vector3d& c);

/// Bounding volume hierarchy over the triangles of a mesh. Median split on
/// the longest box axis, at most four triangles per leaf. Owns a copy of
/// the triangle geometry and is immutable after construction.
class AabbTree {
 public:
  struct Node {
    Aabb box;
    int left = -1;
    int right = -1;
    int first = 0;  // into triangle_order()
    int count = 0;  // > 0 for leaves

    bool leaf() const {
      return count > 0;
    }
  };

  static constexpr int kMaxLeafSize = 4;

  AabbTree() = default;
  explicit AabbTree(const TriMesh& mesh);

  bool empty() const {
    return nodes_.empty();
  }
  const std::vector<Node>& nodes() const {
    return nodes_;
  }
  /// Triangle indices in leaf order; leaf ranges index into this.
  const std::vector<int>& triangle_order() const {
    return order_;
  }
  const std::array<Vector3d, 3>& triangle(int face) const {
    return triangles_[face];
  }
  std::size_t triangle_count() const {
    return triangles_.size();
  }

  /// Nearest intersection with t in (t_min, t_max).
  std::optional<RayHit> first_hit(const Vector3d& origin, const Vector3d& dir, double t_min = 0.0,
                                  double t_max = std::numeric_limits<double>::infinity()) const;

  /// Every intersection with t > t_min, sorted by t then face index.
  std::vector<RayHit> all_hits(const Vector3d& origin, const Vector3d& dir, double t_min = 0.0,
                               bool* any_grazing = nullptr) const;

  ClosestPointResult closest_point(const Vector3d& p) const;

  /// Ray-parity inside test along +x; retries along jittered directions
  /// when the ray grazes an edge or vertex. Requires a watertight mesh.
  bool contains(const Vector3d& p) const;

 private:
  int build(int first, int count, int depth);

  std::vector<std::array<Vector3d, 3>> triangles_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

/// Ray-parity inside test against every triangle of a mesh (no hierarchy).
bool mesh_contains_brute_force(const TriMesh& mesh, const Vector3d& p);

} // namespace deformcap
