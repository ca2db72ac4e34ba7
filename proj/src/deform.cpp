#include "deformcap/deform.h"

#include "deformcap/errors.h"
#include "deformcap/log.h"
#include "deformcap/rasterizer.h"

#include <Eigen/IterativeLinearSolvers>

#include <algorithm>
#include <array>
#include <optional>
#include <cmath>
#include <map>
#include <queue>
#include <sstream>

namespace deformcap {

const char* term_name(Term term) {
  switch (term) {
    case Term::Contact:
      return "contact";
    case Term::Silhouette:
      return "silhouette";
    case Term::Temporal:
      return "temporal";
    case Term::Rigid:
      return "rigid";
    case Term::Regularization:
      return "regularization";
  }
  return "?";
}

void DeformConfig::validate() const {
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw InputError("deform config: term weights must be >= 0");
  }
  if (neighbors < 2) throw InputError("deform config: K (neighbors) must be >= 2");
  if (!(node_spacing > 0.0)) throw InputError("deform config: node spacing must be > 0");
  if (outer_iterations < 1 || inner_iterations < 1) {
    throw InputError("deform config: iteration counts must be >= 1");
  }
  if (!(initial_damping > 0.0)) throw InputError("deform config: damping must be > 0");
  if (!(lambda_c > 0.0)) throw InputError("deform config: lambda_c must be > 0");
}

void DeformGraph::reset_transforms() {
  A.assign(nodes.size(), Matrix3d::Identity());
  t.assign(nodes.size(), Vector3d::Zero());
}

Eigen::VectorXd DeformGraph::parameters() const {
  Eigen::VectorXd x(kParamsPerNode * nodes.size());
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    x.segment<9>(kParamsPerNode * s) = Eigen::Map<const Eigen::Matrix<double, 9, 1>>(A[s].data());
    x.segment<3>(kParamsPerNode * s + 9) = t[s];
  }
  return x;
}

void DeformGraph::set_parameters(const Eigen::VectorXd& params) {
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    Eigen::Map<Eigen::Matrix<double, 9, 1>>(A[s].data()) = params.segment<9>(kParamsPerNode * s);
    t[s] = params.segment<3>(kParamsPerNode * s + 9);
  }
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

// Farthest-point sampling with incremental (pruned) Dijkstra updates.
std::vector<int> farthest_point_nodes(const GeodesicGraph& geo, double spacing) {
  const std::size_t n = geo.vertex_count();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  std::vector<int> nodes;
  using Entry = std::pair<double, int>;
  int next = 0;
  while (true) {
    nodes.push_back(next);
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    dist[next] = 0.0;
    queue.push({0.0, next});
    while (!queue.empty()) {
      const auto [d, v] = queue.top();
      queue.pop();
      if (d > dist[v]) continue;
      for (const auto& nb : geo.neighbors(v)) {
        const double nd = d + nb.length;
        if (nd < dist[nb.vertex]) {
          dist[nb.vertex] = nd;
          queue.push({nd, nb.vertex});
        }
      }
    }
    // Farthest vertex; ties go to the lowest index.
    int far = -1;
    double far_d = -1.0;
    for (std::size_t v = 0; v < n; ++v) {
      if (dist[v] > far_d) {
        far_d = dist[v];
        far = static_cast<int>(v);
      }
    }
    if (far < 0 || far_d < spacing) break;
    next = far;
  }
  return nodes;
}

struct NearestNode {
  int node;
  double dist;
};

// Dijkstra that settles up to `count` distinct nearest sources per vertex.
std::vector<std::vector<NearestNode>> k_nearest_nodes(const GeodesicGraph& geo,
                                                      std::span<const int> node_vertex, int count) {
  const std::size_t n = geo.vertex_count();
  std::vector<std::vector<NearestNode>> found(n);
  struct Entry {
    double d;
    int vertex;
    int node;
    bool operator>(const Entry& o) const {
      return d > o.d || (d == o.d && (node > o.node || (node == o.node && vertex > o.vertex)));
    }
  };
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  for (std::size_t s = 0; s < node_vertex.size(); ++s) {
    queue.push({0.0, node_vertex[s], static_cast<int>(s)});
  }
  auto has = [](const std::vector<NearestNode>& list, int node) {
    return std::any_of(list.begin(), list.end(), [&](const NearestNode& x) { return x.node == node; });
  };
  while (!queue.empty()) {
    const Entry e = queue.top();
    queue.pop();
    auto& list = found[e.vertex];
    if (static_cast<int>(list.size()) >= count || has(list, e.node)) continue;
    list.push_back({e.node, e.d});
    for (const auto& nb : geo.neighbors(e.vertex)) {
      const auto& other = found[nb.vertex];
      if (static_cast<int>(other.size()) < count && !has(other, e.node)) {
        queue.push({e.d + nb.length, nb.vertex, e.node});
      }
    }
  }
  return found;
}

} // namespace

DeformGraph build_graph(const TriMesh& mesh, const DeformConfig& cfg) {
  cfg.validate();
  require_watertight(mesh, "object");
  const GeodesicGraph geo(mesh);
  const int K = cfg.neighbors;

  DeformGraph graph;
  graph.K = K;
  graph.node_vertex = farthest_point_nodes(geo, cfg.node_spacing);
  if (static_cast<int>(graph.node_vertex.size()) < K + 1) {
    throw InputError("deformation graph: only " + std::to_string(graph.node_vertex.size()) +
                     " nodes at spacing " + std::to_string(cfg.node_spacing) + " mm, need at least " +
                     std::to_string(K + 1) + "; use a smaller node spacing");
  }
  for (int v : graph.node_vertex) {
    graph.nodes.push_back(mesh.vertices[v]);
  }
  graph.reset_transforms();

  const auto nearest = k_nearest_nodes(geo, graph.node_vertex, K + 1);
  const std::size_t nv = mesh.vertices.size();
  graph.binding_nodes.assign(nv * K, 0);
  graph.binding_weights.assign(nv * K, 0.0);
  for (std::size_t v = 0; v < nv; ++v) {
    auto list = nearest[v];
    if (list.empty()) {
      throw InputError("deformation graph: vertex " + std::to_string(v) + " reaches no graph node");
    }
    // Settled in order of distance already; pad disconnected leftovers.
    const double d_limit = static_cast<int>(list.size()) > K
        ? list[K].dist
        : 1.5 * list.back().dist + cfg.node_spacing;
    double total = 0.0;
    std::array<double, 16> raw{};
    const int used = std::min<int>(K, static_cast<int>(list.size()));
    for (int k = 0; k < used; ++k) {
      const double ratio = d_limit > 0.0 ? list[k].dist / d_limit : 0.0;
      raw[k] = (1.0 - ratio) * (1.0 - ratio);
      total += raw[k];
    }
    for (int k = 0; k < K; ++k) {
      const std::size_t slot = v * K + k;
      if (k < used) {
        graph.binding_nodes[slot] = list[k].node;
        graph.binding_weights[slot] = total > 0.0 ? raw[k] / total : 1.0 / used;
      } else {
        graph.binding_nodes[slot] = list[0].node;
        graph.binding_weights[slot] = 0.0;
      }
    }
  }

  // Node pairs influencing a common vertex.
  std::vector<std::vector<int>> adjacency(graph.nodes.size());
  for (std::size_t v = 0; v < nv; ++v) {
    for (int a = 0; a < K; ++a) {
      if (graph.binding_weights[v * K + a] <= 0.0) continue;
      for (int b = 0; b < K; ++b) {
        if (a == b || graph.binding_weights[v * K + b] <= 0.0) continue;
        const int na = graph.binding_nodes[v * K + a];
        const int nb = graph.binding_nodes[v * K + b];
        if (na != nb) adjacency[na].push_back(nb);
      }
    }
  }
  for (auto& list : adjacency) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  // w(g_n, g_m): Gaussian in node distance, normalized over S(g_n).
  const double sigma2 = 2.0 * cfg.node_spacing * cfg.node_spacing;
  std::vector<std::map<int, double>> node_weight(graph.nodes.size());
  for (std::size_t n = 0; n < graph.nodes.size(); ++n) {
    double total = 0.0;
    for (int m : adjacency[n]) {
      const double w = std::exp(-(graph.nodes[n] - graph.nodes[m]).squaredNorm() / sigma2);
      node_weight[n][m] = w;
      total += w;
    }
    for (auto& [m, w] : node_weight[n]) {
      w = total > 0.0 ? w / total : 0.0;
    }
  }
  for (std::size_t m = 0; m < graph.nodes.size(); ++m) {
    for (int n : adjacency[m]) {
      graph.node_edges.push_back({static_cast<int>(m), n});
      graph.edge_weights.push_back(node_weight[n].at(static_cast<int>(m)));
    }
  }
  return graph;
}

void rebase_graph(DeformGraph& graph, const TriMesh& mesh) {
  for (std::size_t s = 0; s < graph.nodes.size(); ++s) {
    graph.nodes[s] = mesh.vertices[graph.node_vertex[s]];
  }
}

namespace {

Vector3d warp_vertex(const DeformGraph& graph, const Vector3d& v, std::size_t vertex) {
  Vector3d out = Vector3d::Zero();
  for (int k = 0; k < graph.K; ++k) {
    const std::size_t slot = vertex * graph.K + k;
    const double w = graph.binding_weights[slot];
    if (w == 0.0) continue;
    const int s = graph.binding_nodes[slot];
    out += w * (graph.A[s] * (v - graph.nodes[s]) + graph.nodes[s] + graph.t[s]);
  }
  return out;
}

} // namespace

TriMesh warp(const DeformGraph& graph, const TriMesh& mesh) {
  if (graph.vertex_count() != mesh.vertices.size()) {
    throw InputError("warp: graph was built for a mesh with " + std::to_string(graph.vertex_count()) +
                     " vertices, got " + std::to_string(mesh.vertices.size()));
  }
  TriMesh out;
  out.faces = mesh.faces;
  out.vertices.resize(mesh.vertices.size());
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    out.vertices[v] = warp_vertex(graph, mesh.vertices[v], v);
  }
  out.compute_normals();
  return out;
}

// ---------------------------------------------------------------------------
// Silhouette correspondences

namespace {

Vector2d contour_normal(const MaskImage& mask, int x, int y) {
  Vector2d n = Vector2d::Zero();
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int sx = x + dx;
      const int sy = y + dy;
      const bool bg = sx < 0 || sy < 0 || sx >= mask.width || sy >= mask.height || !mask.foreground(sx, sy);
      if (bg) n += Vector2d(dx, dy);
    }
  }
  const double len = n.norm();
  return len > 0.0 ? Vector2d(n / len) : Vector2d::Zero();
}

struct ContourIndex {
  double cell = 1.0;
  std::map<std::pair<int, int>, std::vector<int>> buckets;
  std::vector<Pixel> pixels;
  std::vector<Vector2d> normals;
};

ContourIndex index_contour(const MaskImage& mask, double cell) {
  ContourIndex index;
  index.cell = std::max(cell, 1.0);
  index.pixels = mask_boundary(mask);
  index.normals.reserve(index.pixels.size());
  for (std::size_t i = 0; i < index.pixels.size(); ++i) {
    const auto& p = index.pixels[i];
    index.normals.push_back(contour_normal(mask, p.x, p.y));
    index.buckets[{static_cast<int>(p.x / index.cell), static_cast<int>(p.y / index.cell)}].push_back(
        static_cast<int>(i));
  }
  return index;
}

} // namespace

std::vector<SilhouetteCorrespondence> find_silhouette_correspondences(
    const TriMesh& warped, const TriMesh* hand, std::span<const MaskImage> masks,
    std::span<const CameraParams> cams, double gate_px) {
  std::vector<SilhouetteCorrespondence> out;
  std::vector<LabeledMesh> scene;
  if (hand != nullptr && !hand->faces.empty()) {
    scene.push_back({hand, PixelLabel::Hand});
  }
  const int object_slot = static_cast<int>(scene.size());
  scene.push_back({&warped, PixelLabel::Object});

  for (const auto& observed : masks) {
    const CameraParams& cam = camera_by_id(cams, observed.view);
    if (observed.width != cam.width || observed.height != cam.height) {
      throw InputError("mask of view " + std::to_string(observed.view) + " does not match camera size");
    }
    const ContourIndex target = index_contour(observed, gate_px);
    if (target.pixels.empty()) continue;

    const DepthBuffer buf = rasterize(scene, cam);
    const MaskImage rendered = object_visible_mask(buf, observed.view);
    auto is_hand = [&](int x, int y) {
      return x >= 0 && y >= 0 && x < buf.width && y < buf.height &&
          buf.label[buf.index(x, y)] == PixelLabel::Hand;
    };

    // Best (closest to the vertex projection) boundary pixel per vertex.
    std::map<int, std::pair<double, SilhouetteCorrespondence>> best;
    for (const Pixel& p : mask_boundary(rendered)) {
      if (is_hand(p.x - 1, p.y) || is_hand(p.x + 1, p.y) || is_hand(p.x, p.y - 1) ||
          is_hand(p.x, p.y + 1)) {
        continue;  // occlusion contour, not a silhouette edge
      }
      const std::size_t idx = buf.index(p.x, p.y);
      if (buf.mesh_index[idx] != object_slot) continue;
      const Vector2d n_r = contour_normal(rendered, p.x, p.y);

      // Nearest observed contour pixel within the gate with agreeing normal.
      const int cx = static_cast<int>(p.x / target.cell);
      const int cy = static_cast<int>(p.y / target.cell);
      int match = -1;
      double match_d2 = gate_px * gate_px;
      for (int by = cy - 1; by <= cy + 1; ++by) {
        for (int bx = cx - 1; bx <= cx + 1; ++bx) {
          auto it = target.buckets.find({bx, by});
          if (it == target.buckets.end()) continue;
          for (int qi : it->second) {
            const Pixel& q = target.pixels[qi];
            const double d2 = double(q.x - p.x) * (q.x - p.x) + double(q.y - p.y) * (q.y - p.y);
            if (d2 > match_d2 || (d2 == match_d2 && match >= 0 && qi > match)) continue;
            if (n_r.dot(target.normals[qi]) <= 0.0) continue;
            match = qi;
            match_d2 = d2;
          }
        }
      }
      if (match < 0) continue;

      const auto& face = warped.faces[buf.face_index[idx]];
      int vertex = face[0];
      double vertex_d2 = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 3; ++k) {
        const Vector2d uv = cam.project(warped.vertices[face[k]]);
        const double d2 = (uv - Vector2d(p.x, p.y)).squaredNorm();
        if (d2 < vertex_d2) {
          vertex_d2 = d2;
          vertex = face[k];
        }
      }
      const Pixel& q = target.pixels[match];
      SilhouetteCorrespondence c;
      c.vertex = vertex;
      c.view = observed.view;
      c.target = cam.project(warped.vertices[vertex]) + Vector2d(q.x - p.x, q.y - p.y);
      c.pixel_distance = std::sqrt(match_d2);
      auto it = best.find(vertex);
      if (it == best.end() || vertex_d2 < it->second.first) {
        best[vertex] = {vertex_d2, c};
      }
    }
    for (const auto& [v, entry] : best) {
      out.push_back(entry.second);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Energy terms

namespace {

using Triplets = std::vector<Eigen::Triplet<double>>;

// Emits rows `row .. row+m-1` of M * d(warped vertex)/d(params).
template <int Rows>
void emit_vertex_jacobian(const DeformGraph& graph, const Vector3d& v, std::size_t vertex,
                          const Eigen::Matrix<double, Rows, 3>& m, int row, Triplets& out) {
  for (int k = 0; k < graph.K; ++k) {
    const std::size_t slot = vertex * graph.K + k;
    const double w = graph.binding_weights[slot];
    if (w == 0.0) continue;
    const int s = graph.binding_nodes[slot];
    const Vector3d local = v - graph.nodes[s];
    const int base = kParamsPerNode * s;
    for (int q = 0; q < Rows; ++q) {
      for (int r = 0; r < 3; ++r) {
        const double mr = m(q, r) * w;
        if (mr == 0.0) continue;
        for (int c = 0; c < 3; ++c) {
          out.emplace_back(row + q, base + 3 * c + r, mr * local[c]);
        }
        out.emplace_back(row + q, base + 9 + r, mr);
      }
    }
  }
}

Eigen::SparseMatrix<double> to_sparse(int rows, int cols, const Triplets& triplets) {
  Eigen::SparseMatrix<double> j(rows, cols);
  j.setFromTriplets(triplets.begin(), triplets.end());
  return j;
}

} // namespace

TermResiduals term_residuals(Term term, const DeformGraph& graph, const DeformContext& ctx,
                             bool with_jacobian) {
  const TriMesh& mesh = *ctx.mesh;
  const int cols = kParamsPerNode * static_cast<int>(graph.node_count());
  TermResiduals out;
  Triplets trip;
  std::vector<double> values;

  switch (term) {
    case Term::Contact: {
      if (ctx.contact.affected.size() != mesh.vertices.size()) break;
      const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
      for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        if (!ctx.contact.affected[v]) continue;
        const Vector3d r = warp_vertex(graph, mesh.vertices[v], v) - ctx.contact.targets[v];
        if (with_jacobian) emit_vertex_jacobian<3>(graph, mesh.vertices[v], v, id, int(values.size()), trip);
        values.insert(values.end(), {r.x(), r.y(), r.z()});
        out.reported += r.norm();
      }
      break;
    }
    case Term::Silhouette: {
      for (const auto& c : ctx.silhouettes) {
        const CameraParams& cam = camera_by_id(ctx.cams, c.view);
        const Vector3d& v = mesh.vertices[c.vertex];
        const Vector3d warped = warp_vertex(graph, v, c.vertex);
        const Vector2d r = cam.project(warped) - c.target;
        if (with_jacobian) {
          const Eigen::Matrix<double, 2, 3> jp = cam.projection_jacobian(warped);
          emit_vertex_jacobian<2>(graph, v, c.vertex, jp, int(values.size()), trip);
        }
        values.insert(values.end(), {r.x(), r.y()});
        out.reported += r.norm();
      }
      break;
    }
    case Term::Temporal: {
      if (ctx.previous == nullptr) break;
      const auto& prev = *ctx.previous;
      const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
      for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const Vector3d r = warp_vertex(graph, mesh.vertices[v], v) - prev[v];
        if (with_jacobian) emit_vertex_jacobian<3>(graph, mesh.vertices[v], v, id, int(values.size()), trip);
        values.insert(values.end(), {r.x(), r.y(), r.z()});
        out.reported += r.norm();
      }
      break;
    }
    case Term::Rigid: {
      for (std::size_t s = 0; s < graph.node_count(); ++s) {
        const Matrix3d& a = graph.A[s];
        const int row = static_cast<int>(values.size());
        const int base = kParamsPerNode * static_cast<int>(s);
        const std::array<std::pair<int, int>, 3> pairs{{{0, 1}, {0, 2}, {1, 2}}};
        for (const auto& [i, j] : pairs) {
          values.push_back(a.col(i).dot(a.col(j)));
        }
        for (int i = 0; i < 3; ++i) {
          values.push_back(1.0 - a.col(i).squaredNorm());
        }
        if (with_jacobian) {
          for (int p = 0; p < 3; ++p) {
            const auto [i, j] = pairs[p];
            for (int r = 0; r < 3; ++r) {
              trip.emplace_back(row + p, base + 3 * i + r, a(r, j));
              trip.emplace_back(row + p, base + 3 * j + r, a(r, i));
            }
          }
          for (int i = 0; i < 3; ++i) {
            for (int r = 0; r < 3; ++r) {
              trip.emplace_back(row + 3 + i, base + 3 * i + r, -2.0 * a(r, i));
            }
          }
        }
      }
      for (int i = 0; i < static_cast<int>(values.size()); ++i) {
        out.reported += values[i] * values[i];
      }
      break;
    }
    case Term::Regularization: {
      for (std::size_t e = 0; e < graph.node_edges.size(); ++e) {
        const auto [m, n] = graph.node_edges[e];
        const double w = graph.edge_weights[e];
        const Vector3d offset = graph.nodes[n] - graph.nodes[m];
        const Vector3d r = graph.A[m] * offset + graph.nodes[m] + graph.t[m] - graph.nodes[n] - graph.t[n];
        out.reported += w * r.norm();
        const double sw = std::sqrt(w);
        const int row = static_cast<int>(values.size());
        values.insert(values.end(), {sw * r.x(), sw * r.y(), sw * r.z()});
        if (with_jacobian) {
          const int bm = kParamsPerNode * m;
          const int bn = kParamsPerNode * n;
          for (int r3 = 0; r3 < 3; ++r3) {
            for (int c = 0; c < 3; ++c) {
              trip.emplace_back(row + r3, bm + 3 * c + r3, sw * offset[c]);
            }
            trip.emplace_back(row + r3, bm + 9 + r3, sw);
            trip.emplace_back(row + r3, bn + 9 + r3, -sw);
          }
        }
      }
      break;
    }
  }
  out.values = Eigen::Map<Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  if (with_jacobian) {
    out.jacobian = to_sparse(static_cast<int>(values.size()), cols, trip);
  }
  return out;
}

EnergyBreakdown energy(const DeformGraph& graph, const DeformContext& ctx, const DeformConfig& cfg) {
  EnergyBreakdown e;
  for (int i = 0; i < kTermCount; ++i) {
    const Term term = static_cast<Term>(i);
    if (cfg.lambdas[i] == 0.0) continue;
    const auto res = term_residuals(term, graph, ctx, false);
    e.terms[i] = res.reported;
    e.squared[i] = res.values.squaredNorm();
    e.total += cfg.lambdas[i] * res.reported;
    e.objective += cfg.lambdas[i] * e.squared[i];
  }
  return e;
}

// ---------------------------------------------------------------------------
// Solver

DeformResult solve_deformation(const DeformInputs& inputs, const DeformConfig& cfg,
                               const DeformGraph* prebuilt) {
  cfg.validate();
  DeformResult result;
  TriMesh current = inputs.posed;
  current.compute_normals();
  DeformGraph graph = prebuilt != nullptr ? *prebuilt : build_graph(current, cfg);
  if (graph.vertex_count() != current.vertices.size()) {
    throw InputError("solve_deformation: graph does not match the object mesh");
  }

  const bool use_contact = cfg.lambda(Term::Contact) > 0.0 && inputs.hand != nullptr &&
      !inputs.hand->faces.empty();
  const bool use_silhouette = cfg.lambda(Term::Silhouette) > 0.0 && !inputs.masks.empty();
  std::optional<AabbTree> hand_tree;
  if (use_contact) {
    hand_tree.emplace(*inputs.hand);
  }
  const int cols = kParamsPerNode * static_cast<int>(graph.node_count());

  for (int outer = 0; outer < cfg.outer_iterations; ++outer) {
    rebase_graph(graph, current);
    graph.reset_transforms();

    DeformContext ctx;
    ctx.mesh = &current;
    ctx.cams = inputs.cams;
    ctx.previous = (inputs.previous && cfg.lambda(Term::Temporal) > 0.0) ? &*inputs.previous : nullptr;
    if (use_contact) {
      const auto pairs = detect_penetrations(current, *inputs.hand, *hand_tree);
      ctx.contact = compute_contact_targets(current, pairs, cfg.lambda_c);
      log_debug("deform outer ", outer, ": ", pairs.size(), " penetrating vertices, ",
                ctx.contact.affected_count(), " affected");
    }
    if (use_silhouette) {
      ctx.silhouettes = find_silhouette_correspondences(current, inputs.hand, inputs.masks, inputs.cams,
                                                        cfg.silhouette_gate_px);
    }

    EnergyBreakdown e = energy(graph, ctx, cfg);
    result.trace.push_back({outer, 0, e, cfg.initial_damping});
    double mu = cfg.initial_damping;
    for (int inner = 1; inner <= cfg.inner_iterations && e.objective > 0.0; ++inner) {
      Eigen::SparseMatrix<double> h(cols, cols);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(cols);
      for (int i = 0; i < kTermCount; ++i) {
        const double lambda = cfg.lambdas[i];
        if (lambda == 0.0) continue;
        const auto res = term_residuals(static_cast<Term>(i), graph, ctx, true);
        if (res.values.size() == 0) continue;
        h += lambda * Eigen::SparseMatrix<double>(res.jacobian.transpose() * res.jacobian);
        g += lambda * (res.jacobian.transpose() * res.values);
      }
      if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;

      const Eigen::VectorXd x = graph.parameters();
      Eigen::VectorXd diag = h.diagonal();
      bool accepted = false;
      bool stalled = false;
      while (mu <= cfg.max_damping) {
        Eigen::SparseMatrix<double> damped = h;
        for (int i = 0; i < cols; ++i) {
          damped.coeffRef(i, i) += mu * (diag[i] + 1e-6);
        }
        Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
        cg.setTolerance(1e-10);
        cg.setMaxIterations(4 * cols);
        cg.compute(damped);
        const Eigen::VectorXd step = cg.solve(-g);
        if (cg.info() != Eigen::Success && cg.error() > 1e-6) {
          mu *= 10.0;
          continue;
        }
        if (step.norm() <= 1e-10 * (1.0 + x.norm())) {
          stalled = true;
          break;
        }
        if (!step.allFinite()) {
          mu *= 10.0;
          continue;
        }
        graph.set_parameters(x + step);
        const EnergyBreakdown cand = energy(graph, ctx, cfg);
        if (cand.objective < e.objective) {
          const double decrease = e.objective - cand.objective;
          e = cand;
          mu = std::max(mu * 0.5, 1e-12);
          accepted = true;
          result.trace.push_back({outer, inner, e, mu});
          if (decrease <= 1e-12 * (1.0 + e.objective)) inner = cfg.inner_iterations;
          break;
        }
        graph.set_parameters(x);
        mu *= 10.0;
      }
      if (!accepted) {
        if (!stalled && mu > cfg.max_damping) {
          log_warn("solve_deformation: damping exceeded ", cfg.max_damping,
                   " in outer iteration ", outer, "; keeping best iterate");
          result.converged = false;
        }
        break;
      }
    }
    current = warp(graph, current);
  }
  result.deformed = std::move(current);
  result.graph = std::move(graph);
  return result;
}

std::string energy_trace_csv(std::span<const EnergyTraceRow> trace) {
  std::ostringstream out;
  out.precision(17);
  out << "outer,inner,total,contact,silhouette,temporal,rigid,regularization,objective,damping\n";
  for (const auto& row : trace) {
    out << row.outer << ',' << row.inner << ',' << row.energy.total;
    for (double t : row.energy.terms) out << ',' << t;
    out << ',' << row.energy.objective << ',' << row.damping << '\n';
  }
  return out.str();
}

} // namespace deformcap
