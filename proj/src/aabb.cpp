#include "deformcap/aabb.h"

#include <algorithm>
#include <cmath>

namespace deformcap {

namespace {

constexpr double kGrazeEps = 1e-9;

Aabb triangle_box(const std::array<Vector3d, 3>& tri) {
  Aabb box;
  for (const auto& p : tri) box.extend(p);
  return box;
}

bool ray_box(const Vector3d& origin, const Vector3d& inv_dir, const Aabb& box, double t_min,
             double t_max) {
  for (int k = 0; k < 3; ++k) {
    double t0 = (box.min[k] - origin[k]) * inv_dir[k];
    double t1 = (box.max[k] - origin[k]) * inv_dir[k];
    if (std::isnan(t0) || std::isnan(t1)) {
      // Ray parallel to the slab and starting on its plane.
      if (origin[k] < box.min[k] || origin[k] > box.max[k]) return false;
      continue;
    }
    if (t0 > t1) std::swap(t0, t1);
    t_min = std::max(t_min, t0);
    t_max = std::min(t_max, t1);
    if (t_min > t_max) return false;
  }
  return true;
}

double box_distance_sq(const Vector3d& p, const Aabb& box) {
  const Vector3d d = (box.min - p).cwiseMax(p - box.max).cwiseMax(Vector3d::Zero());
  return d.squaredNorm();
}

// Deterministic jitter directions, all mostly along +x.
const std::array<Vector3d, 6> kParityDirections = {
    Vector3d(1.0, 0.0, 0.0),
    Vector3d(1.0, 1.3e-3, 2.9e-3).normalized(),
    Vector3d(1.0, -3.1e-3, 1.7e-3).normalized(),
    Vector3d(1.0, 2.3e-2, -1.1e-2).normalized(),
    Vector3d(0.97, -0.13, 0.19).normalized(),
    Vector3d(0.9, 0.31, 0.29).normalized(),
};

template <typename HitCounter>
bool parity_inside(HitCounter&& count_hits) {
  int inside_votes = 0;
  int votes = 0;
  for (const auto& dir : kParityDirections) {
    bool grazing = false;
    const int hits = count_hits(dir, grazing);
    if (!grazing) {
      return (hits % 2) == 1;
    }
    ++votes;
    inside_votes += (hits % 2);
  }
  return 2 * inside_votes > votes;
}

} // namespace

std::optional<RayHit> intersect_triangle(const Vector3d& origin, const Vector3d& dir,
                                         const Vector3d& a, const Vector3d& b, const Vector3d& c,
                                         bool* grazing) {
  const Vector3d e1 = b - a;
  const Vector3d e2 = c - a;
  const Vector3d p = dir.cross(e2);
  const double det = e1.dot(p);
  const double scale = e1.norm() * e2.norm() * dir.norm();
  if (std::abs(det) <= 1e-14 * scale || scale == 0.0) {
    // Parallel (or degenerate). A coplanar ray could touch the triangle.
    if (grazing != nullptr && scale > 0.0) {
      const Vector3d n = e1.cross(e2);
      if (std::abs(n.dot(origin - a)) <= 1e-12 * n.norm() * (1.0 + (origin - a).norm())) {
        *grazing = true;
      }
    }
    return std::nullopt;
  }
  const double inv_det = 1.0 / det;
  const Vector3d s = origin - a;
  const double u = s.dot(p) * inv_det;
  if (u < -kGrazeEps || u > 1.0 + kGrazeEps) return std::nullopt;
  const Vector3d q = s.cross(e1);
  const double v = dir.dot(q) * inv_det;
  if (v < -kGrazeEps || u + v > 1.0 + kGrazeEps) return std::nullopt;
  const double t = e2.dot(q) * inv_det;
  const bool near_edge = u < kGrazeEps || v < kGrazeEps || u + v > 1.0 - kGrazeEps;
  if (near_edge && grazing != nullptr && t > -1e-12) {
    *grazing = true;
  }
  if (u < 0.0 || v < 0.0 || u + v > 1.0) {
    return std::nullopt;
  }
  return RayHit{t, -1, u, v};
}

Vector3d closest_point_on_triangle(const Vector3d& p, const Vector3d& a, const Vector3d& b,
                                   const Vector3d& c) {
  // Region tests after Ericson, Real-Time Collision Detection 5.1.5.
  const Vector3d ab = b - a;
  const Vector3d ac = c - a;
  const Vector3d ap = p - a;
  const double d1 = ab.dot(ap);
  const double d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vector3d bp = p - b;
  const double d3 = ab.dot(bp);
  const double d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
    const double denom = d1 - d3;
    return denom != 0.0 ? Vector3d(a + (d1 / denom) * ab) : a;
  }
  const Vector3d cp = p - c;
  const double d5 = ab.dot(cp);
  const double d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
    const double denom = d2 - d6;
    return denom != 0.0 ? Vector3d(a + (d2 / denom) * ac) : a;
  }
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
    const double denom = (d4 - d3) + (d5 - d6);
    return denom != 0.0 ? Vector3d(b + ((d4 - d3) / denom) * (c - b)) : b;
  }
  const double sum = va + vb + vc;
  if (sum == 0.0) {
    return a;
  }
  const double denom = 1.0 / sum;
  return a + ab * (vb * denom) + ac * (vc * denom);
}

AabbTree::AabbTree(const TriMesh& mesh) {
  triangles_.reserve(mesh.faces.size());
  for (const auto& f : mesh.faces) {
    triangles_.push_back({mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]});
  }
  order_.resize(triangles_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
  if (!triangles_.empty()) {
    nodes_.reserve(2 * triangles_.size() / kMaxLeafSize + 1);
    build(0, static_cast<int>(triangles_.size()), 0);
  }
}

int AabbTree::build(int first, int count, int depth) {
  const int index = static_cast<int>(nodes_.size());
  nodes_.emplace_back();
  Aabb box;
  for (int i = first; i < first + count; ++i) {
    box.extend(triangle_box(triangles_[order_[i]]));
  }
  nodes_[index].box = box;
  if (count <= kMaxLeafSize) {
    nodes_[index].first = first;
    nodes_[index].count = count;
    return index;
  }
  const Vector3d ext = box.extent();
  int axis = 0;
  if (ext.y() > ext[axis]) axis = 1;
  if (ext.z() > ext[axis]) axis = 2;
  const int mid = first + count / 2;
  auto centroid = [&](int tri) {
    const auto& t = triangles_[tri];
    return t[0][axis] + t[1][axis] + t[2][axis];
  };
  std::nth_element(order_.begin() + first, order_.begin() + mid, order_.begin() + first + count,
                   [&](int a, int b) {
                     const double ca = centroid(a);
                     const double cb = centroid(b);
                     return ca < cb || (ca == cb && a < b);
                   });
  const int left = build(first, mid - first, depth + 1);
  const int right = build(mid, first + count - mid, depth + 1);
  nodes_[index].left = left;
  nodes_[index].right = right;
  return index;
}

std::optional<RayHit> AabbTree::first_hit(const Vector3d& origin, const Vector3d& dir, double t_min,
                                          double t_max) const {
  if (nodes_.empty()) return std::nullopt;
  const Vector3d inv_dir = dir.cwiseInverse();
  std::optional<RayHit> best;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    const double limit = best ? best->t : t_max;
    if (!ray_box(origin, inv_dir, node.box, t_min, limit)) continue;
    if (node.leaf()) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int face = order_[i];
        const auto& t = triangles_[face];
        auto hit = intersect_triangle(origin, dir, t[0], t[1], t[2]);
        if (!hit || hit->t <= t_min || hit->t >= t_max) continue;
        if (!best || hit->t < best->t || (hit->t == best->t && face < best->face)) {
          hit->face = face;
          best = hit;
        }
      }
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  return best;
}

std::vector<RayHit> AabbTree::all_hits(const Vector3d& origin, const Vector3d& dir, double t_min,
                                       bool* any_grazing) const {
  std::vector<RayHit> hits;
  if (nodes_.empty()) return hits;
  const Vector3d inv_dir = dir.cwiseInverse();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    // Slightly inflated slab test so grazing hits on box faces are seen.
    if (!ray_box(origin, inv_dir, node.box, t_min - 1e-9, inf)) continue;
    if (node.leaf()) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int face = order_[i];
        const auto& t = triangles_[face];
        bool graze = false;
        auto hit = intersect_triangle(origin, dir, t[0], t[1], t[2], &graze);
        if (graze && any_grazing != nullptr) *any_grazing = true;
        if (!hit || hit->t <= t_min) continue;
        hit->face = face;
        hits.push_back(*hit);
      }
    } else {
      stack.push_back(node.left);
      stack.push_back(node.right);
    }
  }
  std::sort(hits.begin(), hits.end(), [](const RayHit& a, const RayHit& b) {
    return a.t < b.t || (a.t == b.t && a.face < b.face);
  });
  return hits;
}

ClosestPointResult AabbTree::closest_point(const Vector3d& p) const {
  ClosestPointResult best;
  best.distance = std::numeric_limits<double>::infinity();
  if (nodes_.empty()) return best;
  double best_sq = std::numeric_limits<double>::infinity();
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (box_distance_sq(p, node.box) > best_sq) continue;
    if (node.leaf()) {
      for (int i = node.first; i < node.first + node.count; ++i) {
        const int face = order_[i];
        const auto& t = triangles_[face];
        const Vector3d q = closest_point_on_triangle(p, t[0], t[1], t[2]);
        const double d = (q - p).squaredNorm();
        if (d < best_sq || (d == best_sq && face < best.face)) {
          best_sq = d;
          best.point = q;
          best.face = face;
        }
      }
    } else {
      // Visit the nearer child first.
      const double dl = box_distance_sq(p, nodes_[node.left].box);
      const double dr = box_distance_sq(p, nodes_[node.right].box);
      if (dl < dr) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
  }
  best.distance = std::sqrt(best_sq);
  return best;
}

bool AabbTree::contains(const Vector3d& p) const {
  if (nodes_.empty() || !nodes_[0].box.contains(Aabb{p, p}, 1e-9)) {
    return false;
  }
  return parity_inside([&](const Vector3d& dir, bool& grazing) {
    const auto hits = all_hits(p, dir, 0.0, &grazing);
    // A hit at t ~ 0 means the point sits on the surface: ambiguous.
    if (!hits.empty() && hits.front().t < 1e-12) grazing = true;
    return static_cast<int>(hits.size());
  });
}

bool mesh_contains_brute_force(const TriMesh& mesh, const Vector3d& p) {
  return parity_inside([&](const Vector3d& dir, bool& grazing) {
    int hits = 0;
    for (const auto& f : mesh.faces) {
      bool graze = false;
      auto hit = intersect_triangle(p, dir, mesh.vertices[f[0]], mesh.vertices[f[1]],
                                    mesh.vertices[f[2]], &graze);
      grazing = grazing || graze;
      if (hit && hit->t > 0.0) {
        ++hits;
        if (hit->t < 1e-12) grazing = true;
      }
    }
    return hits;
  });
}

} // namespace deformcap
