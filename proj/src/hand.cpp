#include "deformcap/hand.h"

#include "deformcap/errors.h"
#include "deformcap/log.h"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

namespace deformcap {

int HandModel::root() const {
  for (int j = 0; j < joint_count(); ++j) {
    if (parents[j] < 0) {
      return j;
    }
  }
  return -1;
}

std::vector<std::vector<int>> HandModel::children() const {
  std::vector<std::vector<int>> out(parents.size());
  for (int j = 0; j < joint_count(); ++j) {
    if (parents[j] >= 0) {
      out[parents[j]].push_back(j);
    }
  }
  return out;
}

std::vector<int> HandModel::articulated_joints() const {
  const auto kids = children();
  std::vector<int> out;
  for (int j = 0; j < joint_count(); ++j) {
    if (!kids[j].empty()) {
      out.push_back(j);
    }
  }
  return out;
}

void HandModel::validate() const {
  const int n = joint_count();
  if (n == 0) {
    throw InputError("hand model: no joints");
  }
  if (static_cast<int>(rest_joints.size()) != n) {
    throw InputError("hand model: rest_joints count does not match parents");
  }
  int roots = 0;
  for (int j = 0; j < n; ++j) {
    if (parents[j] < 0) {
      ++roots;
    } else if (parents[j] >= n || parents[j] == j) {
      throw InputError("hand model: joint " + std::to_string(j) + " has invalid parent");
    }
  }
  if (roots != 1) {
    throw InputError("hand model: hierarchy must have exactly one root");
  }
  // Every joint must reach the root without cycles.
  for (int j = 0; j < n; ++j) {
    int cur = j;
    int steps = 0;
    while (parents[cur] >= 0) {
      cur = parents[cur];
      if (++steps > n) {
        throw InputError("hand model: cycle in joint hierarchy at joint " + std::to_string(j));
      }
    }
  }
  std::vector<double> sums(rest_mesh.vertices.size(), 0.0);
  for (const auto& w : weights) {
    if (w.vertex < 0 || w.vertex >= static_cast<int>(sums.size()) || w.joint < 0 || w.joint >= n) {
      throw InputError("hand model: skinning weight index out of range");
    }
    if (!(w.weight >= 0.0)) {
      throw InputError("hand model: negative skinning weight at vertex " + std::to_string(w.vertex));
    }
    sums[w.vertex] += w.weight;
  }
  for (std::size_t v = 0; v < sums.size(); ++v) {
    if (std::abs(sums[v] - 1.0) > 1e-6) {
      throw InputError("hand model: skinning weights of vertex " + std::to_string(v) +
                       " sum to " + std::to_string(sums[v]));
    }
  }
}

HandPose HandPose::rest(int joint_count, int frame) {
  HandPose pose;
  pose.frame = frame;
  pose.rotations.assign(joint_count, Vector3d::Zero());
  return pose;
}

bool HandPose::finite() const {
  if (!translation.allFinite()) return false;
  return std::all_of(rotations.begin(), rotations.end(),
                     [](const Vector3d& r) { return r.allFinite(); });
}

namespace {

// Joints in an order where every parent precedes its children.
std::vector<int> topological_order(const HandModel& model) {
  const auto kids = model.children();
  std::vector<int> order;
  order.reserve(model.parents.size());
  order.push_back(model.root());
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (int c : kids[order[i]]) {
      order.push_back(c);
    }
  }
  return order;
}

RigidTransform rotation_about(const Vector3d& pivot, const Matrix3d& rot) {
  // Zero translation exactly when rot is the identity.
  return {rot, pivot - rot * pivot};
}

} // namespace

KinematicsResult forward_kinematics(const HandModel& model, const HandPose& pose) {
  const int n = model.joint_count();
  if (static_cast<int>(pose.rotations.size()) != n) {
    throw InputError("hand pose has " + std::to_string(pose.rotations.size()) +
                     " rotations, model has " + std::to_string(n) + " joints");
  }
  KinematicsResult out;
  out.skeleton.joints.resize(n);
  out.skeleton.valid.assign(n, true);
  out.bones.world.resize(n);
  out.bones.rotations.resize(n);
  out.bones.translations.resize(n);

  for (int j : topological_order(model)) {
    const Matrix3d rot = axis_angle_to_matrix(pose.rotations[j]);
    RigidTransform local = rotation_about(model.rest_joints[j], rot);
    const int p = model.parents[j];
    if (p < 0) {
      local.t += pose.translation;
      out.bones.world[j] = local;
      out.skeleton.joints[j] = model.rest_joints[j] + pose.translation;
    } else {
      out.bones.world[j] = out.bones.world[p].compose(local);
      out.skeleton.joints[j] = out.bones.world[p].apply(model.rest_joints[j]);
    }
    out.bones.rotations[j] = out.bones.world[j].R;
    out.bones.translations[j] = out.skeleton.joints[j] - model.rest_joints[j];
  }
  return out;
}

TriMesh skin_hand(const HandModel& model, const HandPose& pose) {
  const auto fk = forward_kinematics(model, pose);
  TriMesh out;
  out.faces = model.rest_mesh.faces;
  out.vertices.assign(model.rest_mesh.vertices.size(), Vector3d::Zero());
  for (const auto& w : model.weights) {
    const Vector3d& v = model.rest_mesh.vertices[w.vertex];
    out.vertices[w.vertex] += w.weight * fk.bones.world[w.joint].apply(v);
  }
  out.compute_normals();
  return out;
}

std::vector<SkinWeight> inverse_distance_weights(const TriMesh& mesh, std::span<const int> parents,
                                                 std::span<const Vector3d> rest_joints,
                                                 int nearest) {
  struct Bone {
    int joint;
    std::vector<std::pair<Vector3d, Vector3d>> segments;
  };
  std::map<int, Bone> bones;
  for (std::size_t c = 0; c < parents.size(); ++c) {
    const int p = parents[c];
    if (p < 0) continue;
    auto& bone = bones[p];
    bone.joint = p;
    bone.segments.push_back({rest_joints[p], rest_joints[c]});
  }
  if (bones.empty()) {
    throw InputError("inverse_distance_weights: skeleton has no bones");
  }
  auto segment_distance = [](const Vector3d& x, const Vector3d& a, const Vector3d& b) {
    const Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double s = len2 > 0.0 ? std::clamp((x - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (x - (a + s * ab)).norm();
  };

  std::vector<SkinWeight> out;
  std::vector<std::pair<double, int>> dists;
  for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
    dists.clear();
    for (const auto& [joint, bone] : bones) {
      double d = std::numeric_limits<double>::infinity();
      for (const auto& [a, b] : bone.segments) {
        d = std::min(d, segment_distance(mesh.vertices[v], a, b));
      }
      dists.push_back({d, joint});
    }
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(nearest), dists.size());
    std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
    double total = 0.0;
    std::vector<double> raw(k);
    for (std::size_t i = 0; i < k; ++i) {
      const double d = std::max(dists[i].first, 1e-6);
      raw[i] = 1.0 / (d * d);
      total += raw[i];
    }
    for (std::size_t i = 0; i < k; ++i) {
      out.push_back({static_cast<int>(v), dists[i].second, raw[i] / total});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Triangulation

namespace {

struct ViewConstraint {
  Eigen::Matrix<double, 3, 4> rows;  // [x]_x K [R | T]
  Vector3d ray;
};

std::vector<ViewConstraint> valid_constraints(std::span<const KeypointObservation> obs,
                                              std::span<const CameraParams> cams,
                                              double conf_threshold) {
  std::vector<ViewConstraint> out;
  for (const auto& o : obs) {
    if (!(o.confidence > conf_threshold) || !o.uv.allFinite()) {
      continue;
    }
    const CameraParams* cam = nullptr;
    for (const auto& c : cams) {
      if (c.id == o.view) cam = &c;
    }
    if (cam == nullptr) {
      continue;
    }
    Eigen::Matrix<double, 3, 4> proj;
    proj.leftCols<3>() = cam->K * cam->R;
    proj.col(3) = cam->K * cam->T;
    const Vector3d x(o.uv.x(), o.uv.y(), 1.0);
    out.push_back({skew(x) * proj, cam->pixel_ray(o.uv)});
  }
  return out;
}

} // namespace

TriangulationResult triangulate_keypoint(std::span<const KeypointObservation> obs,
                                         std::span<const CameraParams> cams,
                                         double conf_threshold) {
  if (conf_threshold < 0.0 || conf_threshold > 1.0) {
    throw InputError("confidence threshold must lie in [0, 1]");
  }
  TriangulationResult result;
  const auto constraints = valid_constraints(obs, cams, conf_threshold);
  result.valid_views = static_cast<int>(constraints.size());
  if (constraints.size() < 2) {
    result.reason = "fewer than two valid views";
    return result;
  }
  double max_angle = 0.0;
  for (std::size_t a = 0; a < constraints.size(); ++a) {
    for (std::size_t b = a + 1; b < constraints.size(); ++b) {
      const double c = std::clamp(constraints[a].ray.dot(constraints[b].ray), -1.0, 1.0);
      max_angle = std::max(max_angle, std::acos(std::abs(c)));
    }
  }
  if (max_angle < 0.1 * std::numbers::pi / 180.0) {
    result.reason = "degenerate geometry: valid rays parallel within 0.1 degrees";
    return result;
  }
  // Normal equations of the stacked system A k = -b, solved with LDLT.
  Matrix3d ata = Matrix3d::Zero();
  Vector3d atb = Vector3d::Zero();
  for (const auto& c : constraints) {
    const Matrix3d a = c.rows.leftCols<3>();
    const Vector3d b = c.rows.col(3);
    ata += a.transpose() * a;
    atb += a.transpose() * b;
  }
  const Vector3d k = ata.ldlt().solve(-atb);
  if (!k.allFinite()) {
    result.reason = "degenerate geometry: singular normal equations";
    return result;
  }
  result.point = k;
  return result;
}

double triangulation_residual(const Vector3d& k, std::span<const KeypointObservation> obs,
                              std::span<const CameraParams> cams, double conf_threshold) {
  double sum = 0.0;
  for (const auto& c : valid_constraints(obs, cams, conf_threshold)) {
    sum += (c.rows.leftCols<3>() * k + c.rows.col(3)).squaredNorm();
  }
  return sum;
}

Skeleton3D triangulate_skeleton(std::span<const KeypointObservation> obs,
                                std::span<const CameraParams> cams, int joint_count,
                                double conf_threshold) {
  std::vector<std::vector<KeypointObservation>> per_joint(joint_count);
  for (const auto& o : obs) {
    if (o.joint >= 0 && o.joint < joint_count) {
      per_joint[o.joint].push_back(o);
    }
  }
  Skeleton3D skel;
  skel.joints.assign(joint_count, Vector3d::Zero());
  skel.valid.assign(joint_count, false);
  for (int j = 0; j < joint_count; ++j) {
    const auto tri = triangulate_keypoint(per_joint[j], cams, conf_threshold);
    if (tri.point) {
      skel.joints[j] = *tri.point;
      skel.valid[j] = true;
    } else {
      log_debug("joint ", j, " not triangulated: ", tri.reason);
    }
  }
  return skel;
}

std::vector<int> bone_length_outliers(const HandModel& model, const Skeleton3D& skeleton,
                                      double tolerance) {
  std::vector<int> out;
  for (int j = 0; j < model.joint_count(); ++j) {
    const int p = model.parents[j];
    if (p < 0 || !skeleton.valid[j] || !skeleton.valid[p]) continue;
    const double rest = (model.rest_joints[j] - model.rest_joints[p]).norm();
    const double now = (skeleton.joints[j] - skeleton.joints[p]).norm();
    if (rest > 0.0 && std::abs(now - rest) > tolerance * rest) {
      out.push_back(j);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pose fitting

Eigen::VectorXd pack_hand_pose(const HandModel& model, const HandPose& pose) {
  const auto joints = model.articulated_joints();
  Eigen::VectorXd x(3 + 3 * joints.size());
  x.head<3>() = pose.translation;
  for (std::size_t i = 0; i < joints.size(); ++i) {
    x.segment<3>(3 + 3 * i) = pose.rotations[joints[i]];
  }
  return x;
}

HandPose unpack_hand_pose(const HandModel& model, const Eigen::VectorXd& params, int frame) {
  HandPose pose = HandPose::rest(model.joint_count(), frame);
  const auto joints = model.articulated_joints();
  pose.translation = params.head<3>();
  for (std::size_t i = 0; i < joints.size(); ++i) {
    pose.rotations[joints[i]] = params.segment<3>(3 + 3 * i);
  }
  return pose;
}

HandResiduals hand_residuals(const HandModel& model, const HandPose& pose, const Skeleton3D& kp3d,
                             std::span<const KeypointObservation> kp2d,
                             std::span<const CameraParams> cams, const HandSolveConfig& cfg,
                             bool with_jacobian) {
  const int n = model.joint_count();
  const auto fk = forward_kinematics(model, pose);
  const auto articulated = model.articulated_joints();
  const int num_params = 3 + 3 * static_cast<int>(articulated.size());

  // Columns of d f_j / d params, built lazily per joint.
  std::vector<Eigen::Matrix<double, 3, Eigen::Dynamic>> dfj;
  if (with_jacobian) {
    std::vector<int> param_slot(n, -1);
    for (std::size_t i = 0; i < articulated.size(); ++i) {
      param_slot[articulated[i]] = static_cast<int>(i);
    }
    std::vector<std::array<Matrix3d, 3>> dR(n);
    for (int a : articulated) {
      dR[a] = axis_angle_derivatives(pose.rotations[a]);
    }
    dfj.resize(n);
    for (int j = 0; j < n; ++j) {
      auto& d = dfj[j];
      d = Eigen::Matrix<double, 3, Eigen::Dynamic>::Zero(3, num_params);
      d.leftCols<3>() = Matrix3d::Identity();
      for (int a = model.parents[j]; a >= 0; a = model.parents[a]) {
        const int slot = param_slot[a];
        const int pa = model.parents[a];
        const Matrix3d rp = pa >= 0 ? fk.bones.world[pa].R : Matrix3d::Identity();
        const Matrix3d ra = axis_angle_to_matrix(pose.rotations[a]);
        const Vector3d local = ra.transpose() * rp.transpose() *
            (fk.skeleton.joints[j] - fk.skeleton.joints[a]);
        for (int i = 0; i < 3; ++i) {
          d.col(3 + 3 * slot + i) = rp * dR[a][i] * local;
        }
      }
    }
  }

  std::vector<Eigen::VectorXd> blocks;
  std::vector<Eigen::MatrixXd> jblocks;
  HandResiduals out;
  if (cfg.use_3d) {
    for (int j = 0; j < n && j < static_cast<int>(kp3d.size()); ++j) {
      if (!kp3d.valid[j]) continue;
      blocks.push_back(kp3d.joints[j] - fk.skeleton.joints[j]);
      if (with_jacobian) jblocks.push_back(-dfj[j]);
      out.block_sizes.push_back(3);
    }
  }
  if (cfg.use_2d) {
    for (const auto& o : kp2d) {
      if (!(o.confidence > cfg.conf_threshold) || o.joint < 0 || o.joint >= n) continue;
      const CameraParams* cam = nullptr;
      for (const auto& c : cams) {
        if (c.id == o.view) cam = &c;
      }
      if (cam == nullptr) continue;
      const Vector3d& f = fk.skeleton.joints[o.joint];
      blocks.push_back(o.uv - cam->project(f));
      if (with_jacobian) jblocks.push_back(-(cam->projection_jacobian(f) * dfj[o.joint]));
      out.block_sizes.push_back(2);
    }
  }
  int rows = 0;
  for (const auto& b : blocks) rows += static_cast<int>(b.size());
  out.values.resize(rows);
  if (with_jacobian) out.jacobian.resize(rows, num_params);
  int r = 0;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int sz = static_cast<int>(blocks[b].size());
    out.values.segment(r, sz) = blocks[b];
    if (with_jacobian) out.jacobian.middleRows(r, sz) = jblocks[b];
    r += sz;
  }
  return out;
}

namespace {

double robust_rho(double s, double delta, RobustLoss loss) {
  if (loss == RobustLoss::SquaredL2 || s <= delta) {
    return 0.5 * s * s;
  }
  return delta * (s - 0.5 * delta);
}

double robust_weight(double s, double delta, RobustLoss loss) {
  if (loss == RobustLoss::SquaredL2 || s <= delta) {
    return 1.0;
  }
  return delta / s;
}

} // namespace

double hand_objective(const HandResiduals& residuals, const HandSolveConfig& cfg,
                      std::size_t num_3d_blocks) {
  double total = 0.0;
  int r = 0;
  for (std::size_t b = 0; b < residuals.block_sizes.size(); ++b) {
    const int sz = residuals.block_sizes[b];
    const double s = residuals.values.segment(r, sz).norm();
    const double delta = b < num_3d_blocks ? cfg.huber_delta_mm : cfg.huber_delta_px;
    total += robust_rho(s, delta, cfg.loss);
    r += sz;
  }
  return total;
}

HandSolveResult solve_hand_pose(const HandModel& model, const Skeleton3D& kp3d,
                                std::span<const KeypointObservation> kp2d,
                                std::span<const CameraParams> cams, const HandPose& init,
                                const HandSolveConfig& cfg) {
  if (!init.finite()) {
    throw InputError("solve_hand_pose: initial pose is not finite");
  }
  std::size_t num_3d = 0;
  if (cfg.use_3d) {
    for (std::size_t j = 0; j < kp3d.size(); ++j) num_3d += kp3d.valid[j] ? 1 : 0;
  }
  auto evaluate = [&](const Eigen::VectorXd& x, bool jac) {
    return hand_residuals(model, unpack_hand_pose(model, x, init.frame), kp3d, kp2d, cams, cfg, jac);
  };

  HandSolveResult result;
  Eigen::VectorXd x = pack_hand_pose(model, init);
  auto res = evaluate(x, true);
  double f = hand_objective(res, cfg, num_3d);
  result.initial_objective = f;
  result.objective_trace.push_back(f);
  double mu = cfg.initial_damping;

  for (int it = 0; it < cfg.max_iterations; ++it) {
    result.iterations = it + 1;
    if (res.values.size() == 0 || f <= 0.0) {
      result.converged = true;
      break;
    }
    // IRLS weights from the current residual norms.
    Eigen::VectorXd w(res.values.size());
    int r = 0;
    for (std::size_t b = 0; b < res.block_sizes.size(); ++b) {
      const int sz = res.block_sizes[b];
      const double delta = b < num_3d ? cfg.huber_delta_mm : cfg.huber_delta_px;
      w.segment(r, sz).setConstant(robust_weight(res.values.segment(r, sz).norm(), delta, cfg.loss));
      r += sz;
    }
    const Eigen::MatrixXd jw = res.jacobian.transpose() * w.asDiagonal();
    const Eigen::MatrixXd h = jw * res.jacobian;
    const Eigen::VectorXd g = jw * res.values;

    bool accepted = false;
    Eigen::VectorXd step;
    while (mu < 1e12) {
      Eigen::MatrixXd damped = h;
      for (int i = 0; i < damped.rows(); ++i) {
        damped(i, i) += mu * std::max(h(i, i), 1e-6);
      }
      step = damped.ldlt().solve(-g);
      if (!step.allFinite()) {
        mu *= 10.0;
        continue;
      }
      const Eigen::VectorXd candidate = x + step;
      auto cand_res = evaluate(candidate, false);
      const double cand_f = hand_objective(cand_res, cfg, num_3d);
      if (cand_f < f) {
        const double decrease = f - cand_f;
        x = candidate;
        f = cand_f;
        res = evaluate(x, true);
        result.objective_trace.push_back(f);
        mu = std::max(mu * 0.5, 1e-12);
        accepted = true;
        if (decrease <= cfg.tolerance * (1.0 + f) || step.norm() < 1e-12) {
          result.converged = true;
        }
        break;
      }
      mu *= 10.0;
    }
    if (!accepted) {
      // No descent direction left at any damping: a stationary point.
      result.converged = true;
    }
    if (result.converged) break;
  }
  if (!result.converged) {
    log_warn("solve_hand_pose: no convergence after ", cfg.max_iterations,
             " iterations; returning best iterate (objective ", f, ")");
  }
  result.final_objective = f;
  result.pose = unpack_hand_pose(model, x, init.frame);
  for (auto& rot : result.pose.rotations) {
    rot = canonicalize_axis_angle(rot);
  }
  return result;
}

HandPose smooth_pose(std::span<const HandPose> history, const HandPose& current, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw InputError("smoothing alpha must lie in (0, 1]");
  }
  if (history.empty() || alpha == 1.0) {
    return current;
  }
  const HandPose& prev = history.back();
  if (prev.rotations.size() != current.rotations.size()) {
    throw InputError("smooth_pose: joint count mismatch with history");
  }
  HandPose out = current;
  out.translation = alpha * current.translation + (1.0 - alpha) * prev.translation;
  for (std::size_t j = 0; j < current.rotations.size(); ++j) {
    const Vector3d aligned = nearest_axis_angle(current.rotations[j], prev.rotations[j]);
    out.rotations[j] = canonicalize_axis_angle(alpha * aligned + (1.0 - alpha) * prev.rotations[j]);
  }
  return out;
}

} // namespace deformcap
