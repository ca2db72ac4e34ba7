#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformcap/deform.h"
#include "deformcap/errors.h"
#include "deformcap/rasterizer.h"
#include "deformcap/synthgen.h"
#include "test_support.h"

using namespace deformcap;
using testing::random_rotation;

namespace {

DeformConfig spaced(double spacing) {
  DeformConfig cfg;
  cfg.node_spacing = spacing;
  return cfg;
}

std::vector<MaskImage> render_masks(const TriMesh& mesh, std::span<const CameraParams> cams) {
  std::vector<MaskImage> out;
  const std::vector<LabeledMesh> scene{{&mesh, PixelLabel::Object}};
  for (const auto& cam : cams) out.push_back(object_visible_mask(rasterize(scene, cam), cam.id));
  return out;
}

void randomize(DeformGraph& g, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::VectorXd p = g.parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += n(rng) * ((i % kParamsPerNode) < 9 ? 1.0 : 20.0);
  g.set_parameters(p);
}

// A context that makes every term non-empty.
struct EnergyFixture {
  TriMesh mesh = make_icosphere(50.0, 2);
  std::vector<CameraParams> cams = make_rig(3, 400.0, 320, 240);
  DeformGraph graph;
  std::vector<Vector3d> previous;
  DeformContext ctx;

  EnergyFixture() {
    mesh.compute_normals();
    graph = build_graph(mesh, spaced(30.0));
    std::mt19937_64 rng(31);
    std::normal_distribution<double> n(0.0, 2.0);
    ctx.mesh = &mesh;
    ctx.cams = cams;
    ctx.contact.targets = mesh.vertices;
    ctx.contact.affected.assign(mesh.vertices.size(), false);
    ctx.contact.penetrating.assign(mesh.vertices.size(), false);
    for (std::size_t v = 0; v < mesh.vertices.size(); v += 7) {
      ctx.contact.affected[v] = true;
      ctx.contact.targets[v] += Vector3d(n(rng), n(rng), n(rng));
    }
    previous = mesh.vertices;
    for (auto& p : previous) p += Vector3d(n(rng), n(rng), n(rng));
    ctx.previous = &previous;
    for (int v = 0; v < static_cast<int>(mesh.vertices.size()); v += 11) {
      const CameraParams& cam = cams[v % 3];
      ctx.silhouettes.push_back({v, cam.id, cam.project(mesh.vertices[v]) + Vector2d(n(rng), n(rng)), 1.0});
    }
  }
};

} // namespace

// ---------------------------------------------------------------------------
// Graph construction

TEST_CASE("farthest-point nodes are spaced and cover the surface") {
  const TriMesh s = make_icosphere(100.0, 4);
  const double spacing = 50.0;
  const DeformGraph g = build_graph(s, spaced(spacing));
  CHECK(g.node_count() >= 20);
  CHECK(g.node_count() <= 60);
  const int n = static_cast<int>(g.node_count());
  std::vector<int> sources(g.node_vertex.begin(), g.node_vertex.end());
  const auto cover = geodesic_distances(s, sources);
  for (double d : cover) CHECK(d <= spacing + 1e-9);
  for (int a = 0; a < n; ++a) {
    const int src[] = {g.node_vertex[a]};
    const auto d = geodesic_distances(s, src);
    for (int b = 0; b < n; ++b) {
      if (b != a) CHECK(d[g.node_vertex[b]] >= spacing - 1e-9);
    }
    CHECK(g.nodes[a] == s.vertices[g.node_vertex[a]]);
  }
}

TEST_CASE("vertex bindings are normalized") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const DeformGraph g = build_graph(s, spaced(20.0));
  REQUIRE(g.vertex_count() == s.vertices.size());
  CHECK(g.K == 4);
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    double sum = 0.0;
    for (int k = 0; k < g.K; ++k) {
      CHECK(g.binding_weights[v * g.K + k] >= 0.0);
      sum += g.binding_weights[v * g.K + k];
    }
    CHECK(sum == doctest::Approx(1.0));
  }
  CHECK(g.node_edges.size() == g.edge_weights.size());
  for (const auto& [m, n] : g.node_edges) {
    CHECK(std::find(g.node_edges.begin(), g.node_edges.end(), std::make_pair(n, m)) != g.node_edges.end());
  }
}

TEST_CASE("parameters round-trip") {
  const TriMesh s = make_icosphere(50.0, 2);
  DeformGraph g = build_graph(s, spaced(30.0));
  CHECK(g.parameters().size() == kParamsPerNode * static_cast<Eigen::Index>(g.node_count()));
  std::mt19937_64 rng(1);
  randomize(g, rng, 0.1);
  const Eigen::VectorXd p = g.parameters();
  DeformGraph h = g;
  h.reset_transforms();
  h.set_parameters(p);
  CHECK(h.A == g.A);
  CHECK(h.t == g.t);
}

// ---------------------------------------------------------------------------
// Warp

TEST_CASE("identity transforms leave the mesh unchanged") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const DeformGraph g = build_graph(s, spaced(20.0));
  const TriMesh w = warp(g, s);
  for (std::size_t v = 0; v < s.vertices.size(); ++v) CHECK((w.vertices[v] - s.vertices[v]).norm() <= 1e-12);
}

TEST_CASE("equal rigid node transforms move the mesh rigidly") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  DeformGraph g = build_graph(s, spaced(20.0));
  std::mt19937_64 rng(2);
  const Matrix3d r = random_rotation(rng);
  const Vector3d tr(10.0, -4.0, 7.0);
  for (std::size_t n = 0; n < g.node_count(); ++n) {
    g.A[n] = r;
    g.t[n] = r * g.nodes[n] + tr - g.nodes[n];
  }
  const TriMesh w = warp(g, s);
  for (std::size_t v = 0; v < s.vertices.size(); ++v) {
    CHECK((w.vertices[v] - (r * s.vertices[v] + tr)).norm() <= 1e-9);
  }
}

TEST_CASE("warped positions are affine in the parameters") {
  const TriMesh s = make_icosphere(50.0, 2);
  DeformGraph a = build_graph(s, spaced(30.0));
  DeformGraph b = a;
  DeformGraph mix = a;
  std::mt19937_64 rng(3);
  randomize(a, rng, 0.2);
  randomize(b, rng, 0.2);
  mix.set_parameters(0.3 * a.parameters() + 0.7 * b.parameters());
  const TriMesh wa = warp(a, s);
  const TriMesh wb = warp(b, s);
  const TriMesh wm = warp(mix, s);
  for (std::size_t v = 0; v < s.vertices.size(); ++v) {
    CHECK((wm.vertices[v] - (0.3 * wa.vertices[v] + 0.7 * wb.vertices[v])).norm() < 1e-9);
  }
}

TEST_CASE("translating one node only moves the vertices bound to it") {
  const TriMesh s = make_icosphere(50.0, 2);
  DeformGraph g = build_graph(s, spaced(30.0));
  const int node = 0;
  g.t[node] = Vector3d(0.0, 0.0, 1.0);
  const TriMesh w = warp(g, s);
  for (std::size_t v = 0; v < s.vertices.size(); ++v) {
    double weight = 0.0;
    for (int k = 0; k < g.K; ++k) {
      if (g.binding_nodes[v * g.K + k] == node) weight += g.binding_weights[v * g.K + k];
    }
    CHECK((w.vertices[v] - s.vertices[v] - Vector3d(0.0, 0.0, weight)).norm() < 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Silhouette correspondences

TEST_CASE("a mesh matches its own silhouettes exactly") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const auto cams = make_rig(3, 400.0, 320, 240);
  const auto masks = render_masks(s, cams);
  const auto corr = find_silhouette_correspondences(s, nullptr, masks, cams);
  CHECK(corr.size() > 50);
  for (const auto& c : corr) {
    CHECK(c.pixel_distance == 0.0);
    CHECK((camera_by_id(cams, c.view).project(s.vertices[c.vertex]) - c.target).norm() < 1e-12);
  }
}

TEST_CASE("dilated observations pull the contour outward") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const auto cams = make_rig(3, 400.0, 320, 240);
  auto masks = render_masks(s, cams);
  for (auto& m : masks) m = morph_mask(m, 3);
  const auto corr = find_silhouette_correspondences(s, nullptr, masks, cams);
  REQUIRE(corr.size() > 50);
  double mean = 0.0;
  int outward = 0;
  for (const auto& c : corr) {
    const CameraParams& cam = camera_by_id(cams, c.view);
    const Vector2d p = cam.project(s.vertices[c.vertex]);
    const Vector2d center = cam.project(Vector3d::Zero());
    mean += c.pixel_distance;
    outward += (c.target - p).dot(p - center) > 0.0 ? 1 : 0;
  }
  mean /= corr.size();
  CHECK(mean == doctest::Approx(3.0).epsilon(1.0 / 3.0));
  CHECK(outward >= 0.9 * corr.size());
}

TEST_CASE("views with empty masks give no correspondences") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const auto cams = make_rig(2, 400.0, 320, 240);
  std::vector<MaskImage> masks;
  for (const auto& cam : cams) masks.emplace_back(cam.id, cam.width, cam.height);
  CHECK(find_silhouette_correspondences(s, nullptr, masks, cams).empty());
}

// ---------------------------------------------------------------------------
// Energy

TEST_CASE("energy vanishes at rest with consistent data") {
  TriMesh s = make_icosphere(50.0, 2);
  const DeformGraph g = build_graph(s, spaced(30.0));
  const auto cams = make_rig(2, 400.0, 320, 240);
  DeformContext ctx;
  ctx.mesh = &s;
  ctx.cams = cams;
  ctx.contact.targets = s.vertices;
  ctx.contact.affected.assign(s.vertices.size(), true);
  ctx.contact.penetrating.assign(s.vertices.size(), false);
  ctx.previous = &s.vertices;
  ctx.silhouettes.push_back({5, cams[0].id, cams[0].project(s.vertices[5]), 0.0});
  const auto e = energy(g, ctx, DeformConfig{});
  CHECK(e.total < 1e-9);
  CHECK(e.objective < 1e-18);
}

TEST_CASE("rigidity term values") {
  TriMesh s = make_icosphere(50.0, 2);
  DeformGraph g = build_graph(s, spaced(30.0));
  DeformContext ctx;
  ctx.mesh = &s;
  g.A.assign(g.node_count(), Matrix3d::Zero());
  g.A[0] = 2.0 * Matrix3d::Identity();
  std::mt19937_64 rng(4);
  for (std::size_t n = 1; n < g.node_count(); ++n) g.A[n] = random_rotation(rng);
  const auto r = term_residuals(Term::Rigid, g, ctx, false);
  CHECK(r.reported == doctest::Approx(27.0));
  CHECK(r.values.head(6).squaredNorm() == doctest::Approx(27.0));
}

TEST_CASE("regularization term values") {
  TriMesh s = make_icosphere(50.0, 1);
  DeformGraph g;
  g.nodes = {Vector3d(0, 0, 0), Vector3d(10, 0, 0)};
  g.node_vertex = {0, 1};
  g.reset_transforms();
  g.node_edges = {{0, 1}, {1, 0}};
  g.edge_weights = {0.25, 0.5};
  DeformContext ctx;
  ctx.mesh = &s;
  g.t[0] = Vector3d(0.0, 3.0, 4.0);
  const auto r = term_residuals(Term::Regularization, g, ctx, false);
  CHECK(r.reported == doctest::Approx(0.25 * 5.0 + 0.5 * 5.0));
  CHECK(r.values.squaredNorm() == doctest::Approx(0.25 * 25.0 + 0.5 * 25.0));

  // Nodes sharing one rigid motion are consistent.
  const DeformGraph full = [&] {
    DeformGraph h = build_graph(make_icosphere(50.0, 2), spaced(30.0));
    const Matrix3d rot = axis_angle_to_matrix(Vector3d(0.2, -0.4, 0.1));
    for (std::size_t n = 0; n < h.node_count(); ++n) {
      h.A[n] = rot;
      h.t[n] = rot * h.nodes[n] + Vector3d(1, 2, 3) - h.nodes[n];
    }
    return h;
  }();
  CHECK(term_residuals(Term::Regularization, full, ctx, false).reported < 1e-9);
}

TEST_CASE("term jacobians match central differences") {
  EnergyFixture fx;
  REQUIRE(fx.graph.node_count() <= 30);
  std::mt19937_64 rng(5);
  randomize(fx.graph, rng, 0.05);
  for (int i = 0; i < kTermCount; ++i) {
    const Term term = static_cast<Term>(i);
    CAPTURE(term_name(term));
    const auto res = term_residuals(term, fx.graph, fx.ctx, true);
    REQUIRE(res.values.size() > 0);
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      DeformGraph g = fx.graph;
      g.set_parameters(x);
      return term_residuals(term, g, fx.ctx, false).values;
    };
    const Eigen::MatrixXd fd = testing::numeric_jacobian(f, fx.graph.parameters(), 1e-6);
    CHECK(testing::relative_error(Eigen::MatrixXd(res.jacobian), fd) < 1e-4);
  }
}

TEST_CASE("config validation") {
  DeformConfig cfg;
  cfg.validate();
  cfg.lambdas[2] = -1.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = DeformConfig{};
  cfg.neighbors = 1;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

// ---------------------------------------------------------------------------
// Solver

TEST_CASE("without contact the solve keeps a mesh that already fits") {
  const TriMesh s = make_bumpy_sphere(60.0, 3);
  const auto cams = make_rig(3, 400.0, 320, 240);
  const auto masks = render_masks(s, cams);
  DeformInputs in;
  in.posed = s;
  in.masks = masks;
  in.cams = cams;
  DeformConfig cfg = spaced(20.0);
  cfg.outer_iterations = 2;
  const auto r = solve_deformation(in, cfg);
  for (std::size_t v = 0; v < s.vertices.size(); ++v) CHECK((r.deformed.vertices[v] - s.vertices[v]).norm() <= 1e-4);
  CHECK(r.converged);
}

TEST_CASE("press solve reduces the contact term and is deterministic") {
  SynthOptions opt;
  opt.frames = 10;
  opt.views = 4;
  opt.width = 256;
  opt.height = 192;
  opt.subdivisions = 3;
  const SynthScene scene = make_press_sequence(opt);
  const int f = 9;
  DeformInputs in;
  in.posed = apply_pose(scene.object_template, scene.object_poses[f]);
  in.hand = &scene.hand_meshes[f];
  in.masks = scene.masks[f];
  in.cams = scene.cams;
  DeformConfig cfg;
  cfg.outer_iterations = 2;
  const auto a = solve_deformation(in, cfg);
  const auto b = solve_deformation(in, cfg);
  CHECK(a.deformed.vertices == b.deformed.vertices);
  REQUIRE(a.trace.size() >= 2);
  const double first = a.trace.front().energy.terms[int(Term::Contact)];
  CHECK(first > 0.0);
  const TriMesh rigid = in.posed;
  CHECK(intersection_volume(a.deformed, scene.hand_meshes[f], 1.0) <
        intersection_volume(rigid, scene.hand_meshes[f], 1.0));

  const std::string csv = energy_trace_csv(a.trace);
  CHECK(csv.rfind("outer,inner,total,contact,silhouette,temporal,rigid,regularization,objective,damping\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(a.trace.size()) + 1);
}
