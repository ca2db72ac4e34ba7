#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformcap/errors.h"
#include "deformcap/object_pose.h"
#include "deformcap/synthgen.h"
#include "test_support.h"

#include <numbers>

using namespace deformcap;

namespace {

SynthScene small_press() {
  SynthOptions opt;
  opt.frames = 2;
  opt.views = 4;
  opt.width = 256;
  opt.height = 192;
  opt.subdivisions = 3;
  return make_press_sequence(opt);
}

const SynthScene& scene() {
  static const SynthScene s = small_press();
  return s;
}

FrameInputs inputs_at(const SynthScene& s, int f) {
  FrameInputs in;
  in.object_template = &s.object_template;
  in.hand = &s.hand_meshes[f];
  in.masks = s.masks[f];
  in.cams = s.cams;
  return in;
}

std::vector<PoseSample> with_losses(std::initializer_list<double> losses) {
  std::vector<PoseSample> pop;
  for (double l : losses) {
    PoseSample s;
    s.alpha[3] = static_cast<double>(pop.size());
    s.loss = l;
    pop.push_back(s);
  }
  return pop;
}

} // namespace

// ---------------------------------------------------------------------------
// Loss

TEST_CASE("true pose reproduces every mask") {
  const SynthScene& s = scene();
  const auto terms = sample_view_terms(s.object_poses[0], s.object_template, &s.hand_meshes[0], s.masks[0], s.cams);
  REQUIRE(terms.size() == 4);
  for (double t : terms) CHECK(t == 0.0);
  const double loss = sample_loss(s.object_poses[0], s.object_template, &s.hand_meshes[0], s.masks[0], s.cams, 1e-4);
  CHECK(loss == doctest::Approx(1e-4 * s.object_poses[0].norm()));
}

TEST_CASE("empty masks and an off-screen object cost one per view") {
  const SynthScene& s = scene();
  std::vector<MaskImage> empty;
  for (const auto& m : s.masks[0]) empty.emplace_back(m.view, m.width, m.height);
  Vector6d far = Vector6d::Zero();
  far[4] = 1e5;  // far above the ring
  for (double t : sample_view_terms(far, s.object_template, nullptr, empty, s.cams)) CHECK(t == 1.0);
  for (double t : sample_view_terms(far, s.object_template, nullptr, s.masks[0], s.cams)) CHECK(t == 1.0);
}

TEST_CASE("displacing the object raises the loss") {
  const SynthScene& s = scene();
  const Vector6d truth = s.object_poses[0];
  const double at_truth = sample_loss(truth, s.object_template, &s.hand_meshes[0], s.masks[0], s.cams, 0.0);
  double previous = at_truth;
  for (double d : {10.0, 30.0, 50.0}) {
    Vector6d moved = truth;
    moved[3] += d;
    const double l = sample_loss(moved, s.object_template, &s.hand_meshes[0], s.masks[0], s.cams, 0.0);
    CHECK(l > previous);
    previous = l;
  }
}

TEST_CASE("working-resolution evaluator matches the loss on downscaled inputs") {
  const SynthScene& s = scene();
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int scale : {1, 4}) {
    const LossEvaluator eval(inputs_at(s, 1), scale, 1e-4);
    std::vector<MaskImage> small;
    std::vector<CameraParams> cams;
    for (const auto& m : s.masks[1]) small.push_back(downsample_mask(m, scale));
    for (const auto& c : s.cams) cams.push_back(c.scaled(1.0 / scale));
    for (int trial = 0; trial < 8; ++trial) {
      Vector6d a = s.object_poses[1];
      for (int i = 0; i < 3; ++i) a[i] += 0.2 * n(rng);
      for (int i = 3; i < 6; ++i) a[i] += 20.0 * n(rng);
      const double expected = sample_loss(a, s.object_template, &s.hand_meshes[1], small, cams, 1e-4);
      CHECK(eval(a) == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("batch evaluation is independent of the thread count") {
  const SynthScene& s = scene();
  const LossEvaluator eval(inputs_at(s, 0), 4, 1e-4);
  std::vector<PoseSample> a(37);
  for (int i = 0; i < 37; ++i) {
    a[i].alpha = s.object_poses[0];
    a[i].alpha[4] += i - 18.0;
  }
  auto b = a;
  eval.evaluate(a, 1);
  eval.evaluate(b, 3);
  for (int i = 0; i < 37; ++i) {
    CHECK(a[i].loss == b[i].loss);
    CHECK(a[i].loss == eval(a[i].alpha));
  }
}

TEST_CASE("mask size mismatch is rejected") {
  const SynthScene& s = scene();
  std::vector<MaskImage> wrong{MaskImage(s.cams[0].id, 10, 10)};
  FrameInputs in = inputs_at(s, 0);
  in.masks = wrong;
  CHECK_THROWS_AS(LossEvaluator(in, 1, 0.0), InputError);
}

// ---------------------------------------------------------------------------
// Genetic operators

TEST_CASE("roulette selection is uniform when all losses are equal") {
  const auto pop = with_losses({0.4, 0.4, 0.4, 0.4, 0.4});
  std::mt19937_64 rng(1);
  const int draws = 50000;
  std::array<int, 5> counts{};
  for (const auto& p : roulette_select(pop, draws, rng)) ++counts[static_cast<int>(p.alpha[3])];
  double chi2 = 0.0;
  const double expected = draws / 5.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 18.47);  // 4 dof, p = 0.001
}

TEST_CASE("roulette selection favours low loss") {
  const auto pop = with_losses({0.0, 1.0});
  std::mt19937_64 rng(2);
  const auto picked = roulette_select(pop, 100000, rng);
  const auto zeros = std::count_if(picked.begin(), picked.end(), [](const PoseSample& p) { return p.alpha[3] == 0.0; });
  CHECK(static_cast<double>(zeros) / picked.size() >= 0.999);
  CHECK(roulette_select(pop, 0, rng).empty());

  // Probabilities follow (L_max - L_i) + eps.
  const auto three = with_losses({0.0, 0.5, 1.0});
  std::array<int, 3> counts{};
  for (const auto& p : roulette_select(three, 60000, rng)) ++counts[static_cast<int>(p.alpha[3])];
  CHECK(counts[0] / 60000.0 == doctest::Approx(2.0 / 3.0).epsilon(0.02));
  CHECK(counts[1] / 60000.0 == doctest::Approx(1.0 / 3.0).epsilon(0.03));
}

TEST_CASE("mutation with zero width returns the parent") {
  PoseSample p;
  p.alpha << 0.1, -0.2, 0.3, 10, 20, 30;
  p.loss = 0.5;
  std::mt19937_64 rng(3);
  const PoseSample c = mutate(p, 0.0, 0.0, rng);
  CHECK((c.alpha - p.alpha).norm() < 1e-15);
  CHECK(std::isinf(c.loss));
}

TEST_CASE("mutation is uniform within the half-widths") {
  PoseSample p;
  p.alpha << 0.0, 0.0, 0.0, 100.0, -50.0, 7.0;
  std::mt19937_64 rng(4);
  const int n = 100000;
  Vector3d sum = Vector3d::Zero();
  Vector3d lo = Vector3d::Constant(1e9);
  Vector3d hi = Vector3d::Constant(-1e9);
  for (int i = 0; i < n; ++i) {
    const Vector3d d = mutate(p, 0.0, 10.0, rng).translation() - p.translation();
    sum += d;
    lo = lo.cwiseMin(d);
    hi = hi.cwiseMax(d);
  }
  CHECK((sum / n).cwiseAbs().maxCoeff() < 0.1);
  CHECK(lo.minCoeff() >= -10.0);
  CHECK(hi.maxCoeff() <= 10.0);
  CHECK(lo.maxCoeff() < -9.9);
  CHECK(hi.minCoeff() > 9.9);
}

TEST_CASE("mutated rotations stay canonical") {
  PoseSample p;
  p.alpha.head<3>() = Vector3d(0.0, 0.0, std::numbers::pi - 0.01);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const PoseSample c = mutate(p, 0.15, 0.0, rng);
    CHECK(c.rotation().norm() <= std::numbers::pi + 1e-12);
  }
}

TEST_CASE("per-sample generators are distinct and reproducible") {
  auto a = sample_rng(7, 1, 2);
  auto b = sample_rng(7, 1, 2);
  auto c = sample_rng(7, 1, 3);
  auto d = sample_rng(7, 2, 2);
  const auto va = a();
  CHECK(va == b());
  CHECK(va != c());
  CHECK(va != d());
}

TEST_CASE("pose smoothing unwraps the rotation") {
  PoseSample prev;
  PoseSample cur;
  prev.alpha.head<3>() = Vector3d(0.0, 0.0, std::numbers::pi - 0.05);
  cur.alpha.head<3>() = Vector3d(0.0, 0.0, -(std::numbers::pi - 0.05));
  cur.alpha[3] = 10.0;
  const PoseSample s = smooth_object_pose(prev, cur, 0.7);
  CHECK(rotation_angle_between(axis_angle_to_matrix(s.rotation()), axis_angle_to_matrix(cur.rotation())) < 0.05);
  CHECK(s.alpha[3] == doctest::Approx(7.0));
  CHECK((smooth_object_pose(prev, cur, 1.0).alpha - cur.alpha).norm() < 1e-12);
}

TEST_CASE("config validation") {
  GAConfig cfg;
  cfg.validate();
  cfg.population_size = 1;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg = GAConfig{};
  cfg.decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  CHECK(parse_init_distribution("normal") == InitDistribution::Normal);
  CHECK_THROWS_AS(parse_init_distribution("gaussian"), InputError);
}

// ---------------------------------------------------------------------------
// Search

TEST_CASE("search keeps the best sample and is deterministic") {
  const SynthScene& s = scene();
  GAConfig cfg;
  cfg.population_size = 60;
  cfg.iterations = 6;
  cfg.seed = 3;
  const auto a = estimate_pose(inputs_at(s, 0), std::nullopt, cfg);
  REQUIRE(a.best_trace.size() == 7);
  for (std::size_t i = 1; i < a.best_trace.size(); ++i) CHECK(a.best_trace[i] <= a.best_trace[i - 1]);
  CHECK(a.evaluations == 60 + 6 * 59);  // the elite is carried with its loss
  CHECK(a.best.loss == a.best_trace.back());
  cfg.threads = 2;
  const auto b = estimate_pose(inputs_at(s, 0), std::nullopt, cfg);
  CHECK(a.best.alpha == b.best.alpha);
  CHECK(a.best_trace == b.best_trace);
}

TEST_CASE("tracking from the true pose stays there") {
  const SynthScene& s = scene();
  GAConfig cfg;
  cfg.population_size = 50;
  PoseSample prev;
  prev.alpha = s.object_poses[0];
  const auto r = estimate_pose(inputs_at(s, 1), prev, cfg);
  CHECK(r.best_trace.size() == 1);
  CHECK(r.evaluations == 50);
  CHECK((r.best.translation() - s.object_poses[1].tail<3>()).norm() < 5.0);
  CHECK(rotation_angle_between(axis_angle_to_matrix(r.best.rotation()),
                               axis_angle_to_matrix(s.object_poses[1].head<3>())) < 0.05);
}

TEST_CASE("default search region contains the hand and the rig center") {
  const SynthScene& s = scene();
  const Aabb box = default_search_region(&s.hand_meshes[0], s.cams, 100.0);
  CHECK(box.contains(Aabb{Vector3d::Zero(), Vector3d::Zero()}));
  CHECK((camera_convergence_point(s.cams)).norm() < 1e-6);
  CHECK(box.contains(bounding_box(s.hand_meshes[0])));
}
