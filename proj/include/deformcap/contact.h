#pragma once

#include "deformcap/aabb.h"
#include "deformcap/mesh.h"

#include <limits>
#include <span>
#include <vector>

namespace deformcap {

/// Object vertex inside the hand, its matched hand-surface point and the
/// penetration depth |p_o - p_h| (mm).
struct PenetrationPair {
  int object_vertex = -1;
  Vector3d hand_point = Vector3d::Zero();
  double depth = 0.0;
};

/// Per-vertex deformation targets derived from hand contact.
struct ContactTargets {
  std::vector<Vector3d> targets;
  std::vector<bool> affected;
  std::vector<bool> penetrating;

  std::size_t affected_count() const;
};

/// Contact influence below this value is treated as zero.
inline constexpr double kImpactCutoff = 0.02;
inline constexpr double kDefaultLambdaC = 0.2;

/// Vertex graph for approximate geodesics: mesh edges plus, for each pair of
/// triangles sharing an edge, a link between the two opposite vertices
/// weighted by their distance in the unfolded pair (only when that straight
/// line crosses the shared edge).
class GeodesicGraph {
 public:
  explicit GeodesicGraph(const TriMesh& mesh);

  std::size_t vertex_count() const {
    return offsets_.empty() ? 0 : offsets_.size() - 1;
  }

  /// Multi-source Dijkstra; vertices farther than `max_distance` (or
  /// unreachable) stay at +infinity.
  std::vector<double> distances(std::span<const int> sources,
                                double max_distance = std::numeric_limits<double>::infinity()) const;

  struct Neighbor {
    int vertex;
    double length;
  };
  std::span<const Neighbor> neighbors(int v) const {
    return {links_.data() + offsets_[v], links_.data() + offsets_[v + 1]};
  }

 private:
  std::vector<std::size_t> offsets_;
  std::vector<Neighbor> links_;
};

/// Multi-source geodesic distance field (0 at sources). Unreachable
/// vertices get +infinity and a warning is logged.
std::vector<double> geodesic_distances(const TriMesh& mesh, std::span<const int> sources);

/// d * exp(-lambda_c * G).
double impact_factor(double depth, double geodesic, double lambda_c);

/// Object vertices inside the (watertight) hand. For each, the hand point is
/// the first hand-surface hit of a ray from the vertex along its inward
/// normal; the closest hand-surface point is used if that ray misses.
std::vector<PenetrationPair> detect_penetrations(const TriMesh& object, const TriMesh& hand,
                                                 const AabbTree& hand_tree);

/// Penetrating vertices target their hand point; every other vertex moves
/// along its inward normal by the mean impact factor over the pairs that
/// reach it with influence >= kImpactCutoff.
ContactTargets compute_contact_targets(const TriMesh& object,
                                       std::span<const PenetrationPair> pairs,
                                       double lambda_c = kDefaultLambdaC);

/// Same, reusing a prebuilt geodesic graph of `object`.
ContactTargets compute_contact_targets(const TriMesh& object, const GeodesicGraph& graph,
                                       std::span<const PenetrationPair> pairs,
                                       double lambda_c = kDefaultLambdaC);

/// Volume (cm^3) of the voxel centers inside both watertight meshes over
/// the overlap of their bounding boxes.
double intersection_volume(const TriMesh& a, const TriMesh& b, double voxel_mm = 2.0);

/// Per-vertex displacement |deformed - rigid| (mm).
std::vector<double> compute_contact_map(const TriMesh& rigid, const TriMesh& deformed);

} // namespace deformcap
