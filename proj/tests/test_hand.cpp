#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformcap/errors.h"
#include "deformcap/hand.h"
#include "deformcap/synthgen.h"
#include "test_support.h"

#include <numbers>

using namespace deformcap;
using testing::random_unit;

namespace {

std::vector<KeypointObservation> project_point(const Vector3d& p, std::span<const CameraParams> cams, int joint,
                                               double conf) {
  std::vector<KeypointObservation> obs;
  for (const auto& cam : cams) obs.push_back({cam.id, joint, cam.project(p), conf});
  return obs;
}

// Joint position by walking the ancestor chain, one rotation at a time.
Vector3d chain_position(const HandModel& model, const HandPose& pose, int j) {
  Vector3d p = model.rest_joints[j];
  for (int a = model.parents[j]; a >= 0; a = model.parents[a]) {
    const Matrix3d r = axis_angle_to_matrix(pose.rotations[a]);
    p = r * (p - model.rest_joints[a]) + model.rest_joints[a];
  }
  return p + pose.translation;
}

HandPose random_pose(const HandModel& model, std::mt19937_64& rng, double scale) {
  HandPose pose = HandPose::rest(model.joint_count());
  std::uniform_real_distribution<double> u(-scale, scale);
  for (int j : model.articulated_joints()) pose.rotations[j] = Vector3d(u(rng), u(rng), u(rng));
  pose.translation = Vector3d(u(rng), u(rng), u(rng)) * 100.0;
  return pose;
}

struct HandFixture {
  HandModel model = make_hand_model();
  std::vector<CameraParams> cams = make_rig(6, 800.0);
  HandPose truth;
  Skeleton3D kp3d;
  std::vector<KeypointObservation> kp2d;

  explicit HandFixture(std::uint64_t seed = 11, double conf2d = 1.0) {
    std::mt19937_64 rng(seed);
    truth = random_pose(model, rng, 0.3);
    truth.translation = Vector3d(5.0, 60.0, -4.0);
    kp3d = forward_kinematics(model, truth).skeleton;
    for (int j = 0; j < model.joint_count(); ++j) {
      for (const auto& o : project_point(kp3d.joints[j], cams, j, conf2d)) kp2d.push_back(o);
    }
  }
};

} // namespace

// ---------------------------------------------------------------------------
// Triangulation

TEST_CASE("noise-free triangulation from four views") {
  const auto cams = make_rig(4, 800.0);
  const Vector3d p(0.0, 0.0, 500.0);
  const auto obs = project_point(p, cams, 0, 1.0);
  const auto r = triangulate_keypoint(obs, cams);
  REQUIRE(r.point);
  CHECK(r.valid_views == 4);
  CHECK((*r.point - p).norm() < 1e-6);
  CHECK(triangulation_residual(*r.point, obs, cams) < 1e-12);
}

TEST_CASE("views at or below the confidence threshold do not count") {
  const auto cams = make_rig(4, 800.0);
  auto obs = project_point(Vector3d(0.0, 0.0, 500.0), cams, 0, 1.0);
  for (int i = 1; i < 4; ++i) obs[i].confidence = 0.5;
  const auto r = triangulate_keypoint(obs, cams, 0.6);
  CHECK_FALSE(r.point);
  CHECK(r.valid_views == 1);
  CHECK_FALSE(r.reason.empty());

  obs[1].confidence = 0.6;  // strictly greater is required
  CHECK_FALSE(triangulate_keypoint(obs, cams, 0.6).point);
  obs[1].confidence = 0.61;
  CHECK(triangulate_keypoint(obs, cams, 0.6).point);
}

TEST_CASE("a single view is underdetermined") {
  const auto cams = make_rig(4, 800.0);
  const auto obs = project_point(Vector3d(10.0, 20.0, 30.0), std::span(cams).first(1), 0, 1.0);
  CHECK_FALSE(triangulate_keypoint(obs, cams).point);
}

TEST_CASE("triangulation minimizes the algebraic residual") {
  const auto cams = make_rig(6, 800.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 2.0);
  auto obs = project_point(Vector3d(12.0, -30.0, 40.0), cams, 0, 1.0);
  for (auto& o : obs) o.uv += Vector2d(noise(rng), noise(rng));
  const auto r = triangulate_keypoint(obs, cams);
  REQUIRE(r.point);
  const double best = triangulation_residual(*r.point, obs, cams);
  for (int i = 0; i < 50; ++i) {
    const Vector3d q = *r.point + random_unit(rng) * 0.5;
    CHECK(triangulation_residual(q, obs, cams) >= best);
  }
}

TEST_CASE("skeleton triangulation marks joints without views invalid") {
  const auto cams = make_rig(4, 800.0);
  auto obs = project_point(Vector3d(1, 2, 3), cams, 0, 1.0);
  const auto low = project_point(Vector3d(4, 5, 6), cams, 1, 0.2);
  obs.insert(obs.end(), low.begin(), low.end());
  const Skeleton3D s = triangulate_skeleton(obs, cams, 3);
  CHECK(s.valid == std::vector<bool>{true, false, false});
}

// ---------------------------------------------------------------------------
// Kinematics

TEST_CASE("zero pose reproduces the rest joints exactly") {
  const HandModel m = make_hand_model();
  const auto fk = forward_kinematics(m, HandPose::rest(m.joint_count()));
  CHECK(fk.skeleton.joints == m.rest_joints);
}

TEST_CASE("global translation shifts every joint") {
  const HandModel m = make_hand_model();
  HandPose p = HandPose::rest(m.joint_count());
  p.translation = Vector3d(10.0, 0.0, 0.0);
  const auto fk = forward_kinematics(m, p);
  for (int j = 0; j < m.joint_count(); ++j) {
    CHECK((fk.skeleton.joints[j] - (m.rest_joints[j] + Vector3d(10, 0, 0))).norm() < 1e-12);
  }
}

TEST_CASE("a quarter turn at one finger joint rotates its descendants about it") {
  const HandModel m = make_hand_model();
  HandPose p = HandPose::rest(m.joint_count());
  const int joint = 6;  // index proximal interphalangeal
  p.rotations[joint] = Vector3d(std::numbers::pi / 2.0, 0.0, 0.0);
  const auto fk = forward_kinematics(m, p);
  const Matrix3d r = axis_angle_to_matrix(p.rotations[joint]);
  for (int j : {7, 8}) {
    const Vector3d expected = r * (m.rest_joints[j] - m.rest_joints[joint]) + m.rest_joints[joint];
    CHECK((fk.skeleton.joints[j] - expected).norm() < 1e-12);
  }
  for (int j : {0, 5, 6, 9, 12}) CHECK(fk.skeleton.joints[j] == m.rest_joints[j]);
}

TEST_CASE("forward kinematics equals the explicit ancestor chain for random poses") {
  const HandModel m = make_hand_model();
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const HandPose p = random_pose(m, rng, 1.0);
    const auto fk = forward_kinematics(m, p);
    for (int j = 0; j < m.joint_count(); ++j) {
      CHECK((fk.skeleton.joints[j] - chain_position(m, p, j)).norm() < 1e-9);
    }
  }
}

TEST_CASE("hand model validation") {
  HandModel m = make_hand_model();
  m.validate();
  CHECK(m.articulated_joints().size() == 16);
  HandModel cyc = m;
  cyc.parents[0] = 3;
  CHECK_THROWS_AS(cyc.validate(), InputError);
  HandModel neg = m;
  neg.weights[0].weight = -0.5;
  CHECK_THROWS_AS(neg.validate(), InputError);
}

// ---------------------------------------------------------------------------
// Skinning

TEST_CASE("zero pose skins to the rest mesh") {
  const HandModel m = make_hand_model();
  const TriMesh s = skin_hand(m, HandPose::rest(m.joint_count()));
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    CHECK((s.vertices[i] - m.rest_mesh.vertices[i]).norm() <= 1e-9);
  }
}

TEST_CASE("root rigid motion moves every vertex rigidly") {
  HandModel m = make_hand_model();
  m.weights = inverse_distance_weights(m.rest_mesh, m.parents, m.rest_joints);
  HandPose p = HandPose::rest(m.joint_count());
  p.rotations[0] = Vector3d(0.3, -0.7, 0.2);
  p.translation = Vector3d(4.0, -8.0, 15.0);
  const Matrix3d r = axis_angle_to_matrix(p.rotations[0]);
  const TriMesh s = skin_hand(m, p);
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    CHECK((s.vertices[i] - (r * m.rest_mesh.vertices[i] + p.translation)).norm() < 1e-9);
  }
}

TEST_CASE("fully weighted vertices follow their bone") {
  const HandModel m = make_hand_model();
  std::mt19937_64 rng(5);
  const HandPose p = random_pose(m, rng, 0.6);
  const auto fk = forward_kinematics(m, p);
  const TriMesh s = skin_hand(m, p);
  for (std::size_t i = 0; i < s.vertices.size(); ++i) {
    CHECK((s.vertices[i] - fk.bones.world[kIndexDistal].apply(m.rest_mesh.vertices[i])).norm() < 1e-9);
  }
}

TEST_CASE("inverse-distance weights are normalized and local") {
  const HandModel m = make_hand_model();
  const auto w = inverse_distance_weights(m.rest_mesh, m.parents, m.rest_joints);
  std::vector<double> sum(m.rest_mesh.vertices.size(), 0.0);
  std::vector<int> count(m.rest_mesh.vertices.size(), 0);
  for (const auto& e : w) {
    CHECK(e.weight >= 0.0);
    sum[e.vertex] += e.weight;
    ++count[e.vertex];
  }
  for (std::size_t v = 0; v < sum.size(); ++v) {
    CHECK(sum[v] == doctest::Approx(1.0));
    CHECK(count[v] <= 4);
  }
}

TEST_CASE("bone length outliers are flagged") {
  const HandModel m = make_hand_model();
  Skeleton3D s = forward_kinematics(m, HandPose::rest(m.joint_count())).skeleton;
  CHECK(bone_length_outliers(m, s).empty());
  s.joints[8] += Vector3d(0.0, -30.0, 0.0);
  CHECK(bone_length_outliers(m, s) == std::vector<int>{8});
}

// ---------------------------------------------------------------------------
// Pose fitting

TEST_CASE("pose parameters pack and unpack") {
  const HandModel m = make_hand_model();
  std::mt19937_64 rng(9);
  const HandPose p = random_pose(m, rng, 0.5);
  const Eigen::VectorXd x = pack_hand_pose(m, p);
  CHECK(x.size() == 3 + 3 * 16);
  const HandPose back = unpack_hand_pose(m, x, 0);
  CHECK(back.translation == p.translation);
  for (int j : m.articulated_joints()) CHECK(back.rotations[j] == p.rotations[j]);
}

TEST_CASE("residual jacobian matches central differences") {
  const HandFixture fx;
  std::mt19937_64 rng(17);
  HandSolveConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const HandPose at = random_pose(fx.model, rng, 0.4);
    const auto res = hand_residuals(fx.model, at, fx.kp3d, fx.kp2d, fx.cams, cfg, true);
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return hand_residuals(fx.model, unpack_hand_pose(fx.model, x, 0), fx.kp3d, fx.kp2d, fx.cams, cfg, false)
          .values;
    };
    const Eigen::MatrixXd fd = testing::numeric_jacobian(f, pack_hand_pose(fx.model, at), 1e-6);
    CHECK(testing::relative_error(res.jacobian, fd) < 1e-4);
  }
}

TEST_CASE("the true pose is a fixed point of the solver") {
  const HandFixture fx;
  const auto r = solve_hand_pose(fx.model, fx.kp3d, fx.kp2d, fx.cams, fx.truth);
  CHECK(r.final_objective < 1e-8);
  CHECK((pack_hand_pose(fx.model, r.pose) - pack_hand_pose(fx.model, fx.truth)).norm() < 1e-6);
}

TEST_CASE("perturbed initialization recovers the joints") {
  const HandFixture fx;
  HandPose init = fx.truth;
  std::mt19937_64 rng(4);
  for (int j : fx.model.articulated_joints()) init.rotations[j] += random_unit(rng) * 0.05;
  const auto r = solve_hand_pose(fx.model, fx.kp3d, fx.kp2d, fx.cams, init);
  const auto got = forward_kinematics(fx.model, r.pose).skeleton;
  for (int j = 0; j < fx.model.joint_count(); ++j) {
    CHECK((got.joints[j] - fx.kp3d.joints[j]).norm() < 0.5);
  }
  for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
    CHECK(r.objective_trace[i] <= r.objective_trace[i - 1]);
  }
}

TEST_CASE("low-confidence 2D observations leave a 3D-only fit that still converges") {
  const HandFixture fx(11, 0.3);
  HandSolveConfig cfg;
  const auto res = hand_residuals(fx.model, fx.truth, fx.kp3d, fx.kp2d, fx.cams, cfg, false);
  CHECK(res.values.size() == 3 * fx.model.joint_count());
  HandPose init = fx.truth;
  std::mt19937_64 rng(8);
  for (int j : fx.model.articulated_joints()) init.rotations[j] += random_unit(rng) * 0.05;
  const auto r = solve_hand_pose(fx.model, fx.kp3d, fx.kp2d, fx.cams, init, cfg);
  const auto got = forward_kinematics(fx.model, r.pose).skeleton;
  for (int j = 0; j < fx.model.joint_count(); ++j) {
    CHECK((got.joints[j] - fx.kp3d.joints[j]).norm() < 0.5);
  }
}

TEST_CASE("huber objective is quadratic inside the threshold and linear outside") {
  HandResiduals r;
  r.values = Eigen::VectorXd::Zero(3);
  r.values << 3.0, 0.0, 4.0;  // norm 5
  r.block_sizes = {3};
  HandSolveConfig cfg;
  cfg.huber_delta_mm = 10.0;
  CHECK(hand_objective(r, cfg, 1) == doctest::Approx(12.5));
  cfg.huber_delta_mm = 2.0;
  CHECK(hand_objective(r, cfg, 1) == doctest::Approx(2.0 * (5.0 - 1.0)));
  cfg.loss = RobustLoss::SquaredL2;
  CHECK(hand_objective(r, cfg, 1) == doctest::Approx(12.5));
}

// ---------------------------------------------------------------------------
// Smoothing

TEST_CASE("temporal smoothing") {
  HandPose prev = HandPose::rest(21);
  HandPose cur = HandPose::rest(21);
  cur.translation = Vector3d(1.0, 1.0, 1.0);
  cur.rotations[3] = Vector3d(0.2, 0.0, 0.0);

  const std::vector<HandPose> none;
  CHECK(smooth_pose(none, cur, 0.7).translation == cur.translation);

  const std::vector<HandPose> history{prev};
  CHECK(smooth_pose(history, cur, 1.0).translation == cur.translation);
  const HandPose s = smooth_pose(history, cur, 0.7);
  CHECK(s.translation.x() == doctest::Approx(0.7));
  CHECK(s.rotations[3].x() == doctest::Approx(0.14));

  const std::vector<HandPose> same{cur};
  const HandPose fixed = smooth_pose(same, cur, 0.7);
  CHECK((fixed.translation - cur.translation).norm() < 1e-15);
  CHECK((fixed.rotations[3] - cur.rotations[3]).norm() < 1e-15);
}
