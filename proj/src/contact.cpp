#include "deformcap/contact.h"

#include "deformcap/errors.h"
#include "deformcap/log.h"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_map>

namespace deformcap {

std::size_t ContactTargets::affected_count() const {
  return static_cast<std::size_t>(std::count(affected.begin(), affected.end(), true));
}

namespace {

// Opposite-vertex distance across edge (a, b) in the unfolded triangle
// pair, or a negative value when the straight line misses the edge.
double unfolded_distance(const Vector3d& a, const Vector3d& b, const Vector3d& c, const Vector3d& d) {
  const Vector3d ab = b - a;
  const double len = ab.norm();
  if (len == 0.0) return -1.0;
  const Vector3d ex = ab / len;
  const auto planar = [&](const Vector3d& p) {
    const Vector3d ap = p - a;
    const double x = ap.dot(ex);
    const double y = (ap - x * ex).norm();
    return Vector2d(x, y);
  };
  const Vector2d c2 = planar(c);
  Vector2d d2 = planar(d);
  d2.y() = -d2.y();
  const double dy = c2.y() - d2.y();
  if (dy <= 0.0) return -1.0;
  // Crossing of the segment c2-d2 with the x-axis must lie inside [0, len].
  const double s = c2.y() / dy;
  const double x_cross = c2.x() + s * (d2.x() - c2.x());
  if (x_cross <= 0.0 || x_cross >= len) return -1.0;
  return (c2 - d2).norm();
}

} // namespace

GeodesicGraph::GeodesicGraph(const TriMesh& mesh) {
  const std::size_t n = mesh.vertices.size();
  std::vector<std::vector<Neighbor>> adj(n);
  auto link = [&](int u, int v, double w) {
    for (auto& nb : adj[u]) {
      if (nb.vertex == v) {
        nb.length = std::min(nb.length, w);
        return;
      }
    }
    adj[u].push_back({v, w});
  };
  // Edge -> the opposite vertices of its (up to two) faces.
  std::unordered_map<std::uint64_t, std::vector<int>> opposite;
  auto key = [](int a, int b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
  };
  for (const auto& f : mesh.faces) {
    for (int k = 0; k < 3; ++k) {
      const int a = f[k];
      const int b = f[(k + 1) % 3];
      const double w = (mesh.vertices[a] - mesh.vertices[b]).norm();
      link(a, b, w);
      link(b, a, w);
      opposite[key(a, b)].push_back(f[(k + 2) % 3]);
    }
  }
  for (const auto& [k, opp] : opposite) {
    if (opp.size() != 2) continue;
    const int a = static_cast<int>(k >> 32);
    const int b = static_cast<int>(k & 0xffffffffu);
    const int c = opp[0];
    const int d = opp[1];
    if (c == d) continue;
    const double w = unfolded_distance(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c],
                                       mesh.vertices[d]);
    if (w > 0.0) {
      link(c, d, w);
      link(d, c, w);
    }
  }
  offsets_.resize(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) {
    // Deterministic neighbor order regardless of hash-map iteration.
    std::sort(adj[v].begin(), adj[v].end(),
              [](const Neighbor& x, const Neighbor& y) { return x.vertex < y.vertex; });
    offsets_[v + 1] = offsets_[v] + adj[v].size();
  }
  links_.reserve(offsets_[n]);
  for (const auto& list : adj) {
    links_.insert(links_.end(), list.begin(), list.end());
  }
}

std::vector<double> GeodesicGraph::distances(std::span<const int> sources, double max_distance) const {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(vertex_count(), inf);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (int s : sources) {
    if (s < 0 || s >= static_cast<int>(dist.size())) {
      throw InputError("geodesic source vertex " + std::to_string(s) + " out of range");
    }
    dist[s] = 0.0;
    queue.push({0.0, s});
  }
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[v]) continue;
    for (const auto& nb : neighbors(v)) {
      const double nd = d + nb.length;
      if (nd < dist[nb.vertex] && nd <= max_distance) {
        dist[nb.vertex] = nd;
        queue.push({nd, nb.vertex});
      }
    }
  }
  return dist;
}

std::vector<double> geodesic_distances(const TriMesh& mesh, std::span<const int> sources) {
  if (sources.empty()) {
    throw InputError("geodesic_distances: no source vertices");
  }
  auto dist = GeodesicGraph(mesh).distances(sources);
  const auto unreachable = std::count(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
  if (unreachable > 0) {
    log_warn("geodesic_distances: ", unreachable, " vertices unreachable from the sources");
  }
  return dist;
}

double impact_factor(double depth, double geodesic, double lambda_c) {
  return depth * std::exp(-lambda_c * geodesic);
}

std::vector<PenetrationPair> detect_penetrations(const TriMesh& object, const TriMesh& hand,
                                                 const AabbTree& hand_tree) {
  require_watertight(hand, "hand");
  std::vector<Vector3d> normals = object.normals;
  if (normals.size() != object.vertices.size()) {
    TriMesh copy = object;
    copy.compute_normals();
    normals = std::move(copy.normals);
  }
  const Aabb hand_box = bounding_box(hand);
  std::vector<PenetrationPair> pairs;
  for (std::size_t v = 0; v < object.vertices.size(); ++v) {
    const Vector3d& p = object.vertices[v];
    if (!hand_box.contains(Aabb{p, p}) || !hand_tree.contains(p)) {
      continue;
    }
    PenetrationPair pair;
    pair.object_vertex = static_cast<int>(v);
    std::optional<RayHit> hit;
    if (normals[v].squaredNorm() > 0.0) {
      hit = hand_tree.first_hit(p, -normals[v], 0.0);
    }
    if (hit) {
      pair.hand_point = p - hit->t * normals[v];
    } else {
      pair.hand_point = hand_tree.closest_point(p).point;
    }
    pair.depth = (p - pair.hand_point).norm();
    pairs.push_back(pair);
  }
  return pairs;
}

ContactTargets compute_contact_targets(const TriMesh& object, std::span<const PenetrationPair> pairs,
                                       double lambda_c) {
  return compute_contact_targets(object, GeodesicGraph(object), pairs, lambda_c);
}

ContactTargets compute_contact_targets(const TriMesh& object, const GeodesicGraph& graph,
                                       std::span<const PenetrationPair> pairs, double lambda_c) {
  if (!(lambda_c > 0.0)) {
    throw InputError("lambda_c must be positive");
  }
  const std::size_t n = object.vertices.size();
  ContactTargets out;
  out.targets = object.vertices;
  out.affected.assign(n, false);
  out.penetrating.assign(n, false);
  for (const auto& p : pairs) {
    out.targets[p.object_vertex] = p.hand_point;
    out.affected[p.object_vertex] = true;
    out.penetrating[p.object_vertex] = true;
  }
  std::vector<Vector3d> normals = object.normals;
  if (normals.size() != n) {
    TriMesh copy = object;
    copy.compute_normals();
    normals = std::move(copy.normals);
  }
  std::vector<double> impact_sum(n, 0.0);
  std::vector<int> impact_count(n, 0);
  for (const auto& p : pairs) {
    if (p.depth < kImpactCutoff) continue;
    // Influence drops below the cutoff beyond this geodesic radius.
    const double radius = std::log(p.depth / kImpactCutoff) / lambda_c;
    const int src[] = {p.object_vertex};
    const auto dist = graph.distances(src, radius);
    for (std::size_t v = 0; v < n; ++v) {
      if (out.penetrating[v] || !std::isfinite(dist[v])) continue;
      const double influence = impact_factor(p.depth, dist[v], lambda_c);
      if (influence >= kImpactCutoff) {
        impact_sum[v] += influence;
        ++impact_count[v];
      }
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (impact_count[v] == 0) continue;
    out.targets[v] = object.vertices[v] - (impact_sum[v] / impact_count[v]) * normals[v];
    out.affected[v] = true;
  }
  return out;
}

double intersection_volume(const TriMesh& a, const TriMesh& b, double voxel_mm) {
  if (!(voxel_mm > 0.0)) {
    throw InputError("intersection_volume: voxel size must be positive");
  }
  require_watertight(a, "first");
  require_watertight(b, "second");
  const Aabb ba = bounding_box(a);
  const Aabb bb = bounding_box(b);
  Aabb overlap;
  overlap.min = ba.min.cwiseMax(bb.min);
  overlap.max = ba.max.cwiseMin(bb.max);
  if (overlap.empty()) {
    return 0.0;
  }
  const AabbTree ta(a);
  const AabbTree tb(b);
  const Vector3d ext = overlap.extent();
  const int nx = std::max(1, static_cast<int>(std::ceil(ext.x() / voxel_mm)));
  const int ny = std::max(1, static_cast<int>(std::ceil(ext.y() / voxel_mm)));
  const int nz = std::max(1, static_cast<int>(std::ceil(ext.z() / voxel_mm)));
  std::size_t inside = 0;
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Vector3d c = overlap.min + voxel_mm * Vector3d(i + 0.5, j + 0.5, k + 0.5);
        if ((c.array() > overlap.max.array()).any()) continue;
        if (ta.contains(c) && tb.contains(c)) ++inside;
      }
    }
  }
  return static_cast<double>(inside) * voxel_mm * voxel_mm * voxel_mm / 1000.0;
}

std::vector<double> compute_contact_map(const TriMesh& rigid, const TriMesh& deformed) {
  if (rigid.vertices.size() != deformed.vertices.size() || rigid.faces != deformed.faces) {
    throw InputError("contact map: meshes have different topology");
  }
  std::vector<double> out(rigid.vertices.size());
  for (std::size_t v = 0; v < out.size(); ++v) {
    out[v] = (deformed.vertices[v] - rigid.vertices[v]).norm();
  }
  return out;
}

} // namespace deformcap
