#pragma once

#include "deformcap/camera.h"
#include "deformcap/contact.h"
#include "deformcap/mesh.h"
#include "deformcap/observations.h"

#include <Eigen/Sparse>

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deformcap {

/// Energy terms in the order of their weights.
enum class Term : int { Contact = 0, Silhouette = 1, Temporal = 2, Rigid = 3, Regularization = 4 };
inline constexpr int kTermCount = 5;
const char* term_name(Term term);

struct DeformConfig {
  /// Weights of contact, silhouette, temporal, rigid and regularization.
  std::array<double, kTermCount> lambdas{5.0, 5.0, 1.0, 1.0, 2.0};
  double node_spacing = 15.0;  // mm, geodesic
  int neighbors = 4;           // K nodes per vertex
  int outer_iterations = 5;
  int inner_iterations = 10;
  double initial_damping = 1e-4;
  double max_damping = 1e8;
  double lambda_c = kDefaultLambdaC;
  double silhouette_gate_px = 20.0;

  double lambda(Term term) const {
    return lambdas[static_cast<int>(term)];
  }
  void validate() const;
};

/// Embedded deformation graph. Nodes sit on mesh vertices; each node carries
/// an affine map (A, t) and each mesh vertex blends its K nearest nodes.
struct DeformGraph {
  std::vector<Vector3d> nodes;
  std::vector<int> node_vertex;
  std::vector<Matrix3d> A;
  std::vector<Vector3d> t;

  int K = 4;
  /// Row-major V x K node indices and weights.
  std::vector<int> binding_nodes;
  std::vector<double> binding_weights;

  /// Directed node pairs (m, n) with n in S(m); contains both directions.
  std::vector<std::pair<int, int>> node_edges;
  /// w(g_n, g_m) for each directed edge (m, n).
  std::vector<double> edge_weights;

  std::size_t node_count() const {
    return nodes.size();
  }
  std::size_t vertex_count() const {
    return K > 0 ? binding_nodes.size() / K : 0;
  }
  void reset_transforms();

  /// Flat parameters: per node A column-major (9) then t (3).
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& params);
};

inline constexpr int kParamsPerNode = 12;

/// Farthest-point node sampling (geodesic spacing), K-nearest geodesic
/// binding with weights (1 - G(v,g)/G(v,g_{K+1}))^2, normalized.
DeformGraph build_graph(const TriMesh& mesh, const DeformConfig& cfg);

/// Moves graph nodes onto the current positions of their vertices.
void rebase_graph(DeformGraph& graph, const TriMesh& mesh);

/// Blends node transforms per vertex. Normals recomputed.
TriMesh warp(const DeformGraph& graph, const TriMesh& mesh);

struct SilhouetteCorrespondence {
  int vertex = -1;
  int view = 0;
  /// Image-plane target for the vertex projection (pixels).
  Vector2d target = Vector2d::Zero();
  /// Distance between the rendered contour pixel and its observed match.
  double pixel_distance = 0.0;
};

/// Matches rendered object contour pixels (excluding hand-occlusion edges)
/// to observed contour pixels within the gate with agreeing 2D normals. The
/// target is the vertex projection shifted by the pixel offset of the match.
std::vector<SilhouetteCorrespondence> find_silhouette_correspondences(
    const TriMesh& warped, const TriMesh* hand, std::span<const MaskImage> masks,
    std::span<const CameraParams> cams, double gate_px = 20.0);

/// Everything the energy needs for one outer iteration.
struct DeformContext {
  const TriMesh* mesh = nullptr;  // mesh the graph deforms
  std::span<const CameraParams> cams;
  /// Previous frame's deformed vertices in the current frame's pose.
  const std::vector<Vector3d>* previous = nullptr;
  ContactTargets contact;
  std::vector<SilhouetteCorrespondence> silhouettes;
};

/// Residuals of one term: values are the least-squares residual vector
/// (so that squaredNorm() is the smooth objective), `reported` the term's
/// value under its own norm.
struct TermResiduals {
  Eigen::VectorXd values;
  Eigen::SparseMatrix<double> jacobian;
  double reported = 0.0;
};

TermResiduals term_residuals(Term term, const DeformGraph& graph, const DeformContext& ctx,
                             bool with_jacobian);

struct EnergyBreakdown {
  /// Weighted sum of the reported terms.
  double total = 0.0;
  /// Unweighted terms under their own norms.
  std::array<double, kTermCount> terms{};
  /// Unweighted squared residual sums; the solver minimizes
  /// sum lambda_i * squared_i.
  std::array<double, kTermCount> squared{};
  double objective = 0.0;
};

EnergyBreakdown energy(const DeformGraph& graph, const DeformContext& ctx, const DeformConfig& cfg);

struct DeformInputs {
  TriMesh posed;  // rigidly posed template
  const TriMesh* hand = nullptr;
  std::span<const MaskImage> masks;
  std::span<const CameraParams> cams;
  std::optional<std::vector<Vector3d>> previous;
};

struct EnergyTraceRow {
  int outer = 0;
  int inner = 0;
  EnergyBreakdown energy;
  double damping = 0.0;
};

struct DeformResult {
  TriMesh deformed;
  DeformGraph graph;
  std::vector<EnergyTraceRow> trace;
  bool converged = true;
};

/// Outer loop re-detects contacts and silhouettes on the current mesh, then
/// runs damped Gauss-Newton over all node parameters; the mesh is updated
/// and the graph re-based at the end of every outer iteration.
DeformResult solve_deformation(const DeformInputs& inputs, const DeformConfig& cfg,
                               const DeformGraph* prebuilt = nullptr);

/// CSV with header "outer,inner,total,contact,silhouette,temporal,rigid,regularization,objective,damping".
std::string energy_trace_csv(std::span<const EnergyTraceRow> trace);

} // namespace deformcap
