#pragma once

#include "deformcap/camera.h"
#include "deformcap/mesh.h"
#include "deformcap/observations.h"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deformcap {

/// Sparse skinning weight entry.
struct SkinWeight {
  int vertex = 0;
  int joint = 0;
  double weight = 0.0;
};

/// Rigged hand template: joint tree, rest mesh and per-vertex weights.
struct HandModel {
  std::vector<int> parents;  // -1 for the root (wrist)
  std::vector<Vector3d> rest_joints;
  TriMesh rest_mesh;
  std::vector<SkinWeight> weights;

  int joint_count() const {
    return static_cast<int>(parents.size());
  }
  int root() const;
  std::vector<std::vector<int>> children() const;
  /// Joints with at least one child; their rotations drive the skeleton.
  std::vector<int> articulated_joints() const;
  /// Throws InputError on a malformed tree or weights.
  void validate() const;
};

/// Hand pose: per-joint axis-angle rotations (the root entry is the global
/// rotation about the wrist) plus a global translation in millimeters.
/// Leaf joint rotations are carried but have no effect.
struct HandPose {
  int frame = 0;
  std::vector<Vector3d> rotations;
  Vector3d translation = Vector3d::Zero();

  static HandPose rest(int joint_count, int frame = 0);
  bool finite() const;
};

struct Skeleton3D {
  std::vector<Vector3d> joints;
  std::vector<bool> valid;

  std::size_t size() const {
    return joints.size();
  }
};

/// Rigid transform x -> R x + t.
struct RigidTransform {
  Matrix3d R = Matrix3d::Identity();
  Vector3d t = Vector3d::Zero();

  Vector3d apply(const Vector3d& x) const {
    return R * x + t;
  }
  RigidTransform compose(const RigidTransform& inner) const {
    return {R * inner.R, R * inner.t + t};
  }
};

struct BoneTransforms {
  /// Per-joint rotation R_j and translation t_j = f_j(theta) - rest_j, so
  /// that a point attached to bone j maps to R_j (v - rest_j) + rest_j + t_j.
  std::vector<Matrix3d> rotations;
  std::vector<Vector3d> translations;
  /// Same transforms as affine maps.
  std::vector<RigidTransform> world;
};

struct KinematicsResult {
  Skeleton3D skeleton;
  BoneTransforms bones;
};

KinematicsResult forward_kinematics(const HandModel& model, const HandPose& pose);

/// Linear blend skinning of the rest mesh under `pose`.
TriMesh skin_hand(const HandModel& model, const HandPose& pose);

/// Normalized 1/d^2 weights to the 4 nearest bones (segments from an
/// articulated joint to its children), for models without painted weights.
std::vector<SkinWeight> inverse_distance_weights(const TriMesh& mesh, std::span<const int> parents,
                                                 std::span<const Vector3d> rest_joints,
                                                 int nearest = 4);

// ---------------------------------------------------------------------------
// Triangulation

struct TriangulationResult {
  std::optional<Vector3d> point;
  int valid_views = 0;
  std::string reason;
};

/// Linear multi-view triangulation from the cross-product constraints
/// [x]_x K (R k + T) = 0 over views with confidence > threshold.
TriangulationResult triangulate_keypoint(std::span<const KeypointObservation> obs,
                                         std::span<const CameraParams> cams,
                                         double conf_threshold = 0.6);

/// Sum of squared cross-product residuals at `k` over the valid views.
double triangulation_residual(const Vector3d& k, std::span<const KeypointObservation> obs,
                              std::span<const CameraParams> cams, double conf_threshold = 0.6);

/// Triangulates every joint of one frame.
Skeleton3D triangulate_skeleton(std::span<const KeypointObservation> obs,
                                std::span<const CameraParams> cams, int joint_count,
                                double conf_threshold = 0.6);

/// Flags (does not reject) joints whose bone to the parent deviates more
/// than `tolerance` (relative) from the rest bone length. Returns the
/// offending joint indices.
std::vector<int> bone_length_outliers(const HandModel& model, const Skeleton3D& skeleton,
                                      double tolerance = 0.2);

// ---------------------------------------------------------------------------
// Pose fitting

enum class RobustLoss { Huber, SquaredL2 };

struct HandSolveConfig {
  double conf_threshold = 0.6;
  RobustLoss loss = RobustLoss::Huber;
  double huber_delta_px = 5.0;
  double huber_delta_mm = 5.0;
  int max_iterations = 50;
  double initial_damping = 1e-3;
  double tolerance = 1e-12;
  bool use_2d = true;
  bool use_3d = true;
};

struct HandSolveResult {
  HandPose pose;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Objective after every accepted step, starting with the initial value.
  std::vector<double> objective_trace;
};

/// Stacked residuals of the pose objective: one 3-vector per valid 3D
/// keypoint followed by one 2-vector per valid 2D observation, unweighted.
struct HandResiduals {
  Eigen::VectorXd values;
  Eigen::MatrixXd jacobian;  // rows x parameter count, empty if not requested
  std::vector<int> block_sizes;
};

/// Parameter vector layout: [translation(3), rotation of each articulated
/// joint in articulated_joints() order (3 each)]. The root is articulated.
Eigen::VectorXd pack_hand_pose(const HandModel& model, const HandPose& pose);
HandPose unpack_hand_pose(const HandModel& model, const Eigen::VectorXd& params, int frame);

HandResiduals hand_residuals(const HandModel& model, const HandPose& pose, const Skeleton3D& kp3d,
                             std::span<const KeypointObservation> kp2d,
                             std::span<const CameraParams> cams, const HandSolveConfig& cfg,
                             bool with_jacobian);

/// Robust objective for the residuals above.
double hand_objective(const HandResiduals& residuals, const HandSolveConfig& cfg,
                      std::size_t num_3d_blocks);

/// Damped Gauss-Newton fit of the pose to 3D and 2D keypoints.
HandSolveResult solve_hand_pose(const HandModel& model, const Skeleton3D& kp3d,
                                std::span<const KeypointObservation> kp2d,
                                std::span<const CameraParams> cams, const HandPose& init,
                                const HandSolveConfig& cfg = {});

/// Exponential moving average against the last entry of `history`.
HandPose smooth_pose(std::span<const HandPose> history, const HandPose& current, double alpha);

} // namespace deformcap
