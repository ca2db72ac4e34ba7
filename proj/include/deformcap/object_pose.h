#pragma once

#include "deformcap/camera.h"
#include "deformcap/mesh.h"
#include "deformcap/observations.h"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace deformcap {

using Vector6d = Eigen::Matrix<double, 6, 1>;

/// Rigid object pose: axis-angle rotation (rad) then translation (mm).
struct PoseSample {
  Vector6d alpha = Vector6d::Zero();
  double loss = std::numeric_limits<double>::infinity();

  Vector3d rotation() const {
    return alpha.head<3>();
  }
  Vector3d translation() const {
    return alpha.tail<3>();
  }
};

/// Template mesh moved by the pose: v -> R(alpha) v + t.
TriMesh apply_pose(const TriMesh& tmpl, const Vector6d& alpha);

enum class InitDistribution { Uniform, Normal };

InitDistribution parse_init_distribution(const std::string& name);
const char* init_distribution_name(InitDistribution init);

struct GAConfig {
  int population_size = 500;
  /// Generations at the first frame.
  int iterations = 20;
  /// Generations at later frames (the first is the reseed around the
  /// previous solution).
  int tracking_iterations = 1;
  InitDistribution init = InitDistribution::Uniform;
  double rotation_half_width = 0.15;      // rad
  double translation_half_width = 15.0;   // mm
  double decay = 0.8;                     // per generation
  double tracking_rotation_half_width = 0.02;
  double tracking_translation_half_width = 3.0;
  double lambda_o = 1e-4;
  std::uint64_t seed = 7;
  /// Losses are evaluated on masks and cameras downscaled by this factor.
  int working_downscale = 4;
  /// Margin added around the scene box for the translation search region.
  double search_margin = 100.0;
  /// EMA weight of the new estimate; 1 disables smoothing.
  double smoothing_alpha = 0.7;
  /// 0 uses the hardware concurrency.
  int threads = 0;

  void validate() const;
};

/// Occlusion-aware silhouette loss at full resolution:
/// sum over views of (1 - IoU(visible object, mask)) + lambda_o |alpha|.
/// A view with an empty union contributes 1.
double sample_loss(const Vector6d& alpha, const TriMesh& tmpl, const TriMesh* hand,
                   std::span<const MaskImage> masks, std::span<const CameraParams> cams,
                   double lambda_o);

/// Per-view IoU terms (without regularization) of the same loss.
std::vector<double> sample_view_terms(const Vector6d& alpha, const TriMesh& tmpl, const TriMesh* hand,
                                      std::span<const MaskImage> masks,
                                      std::span<const CameraParams> cams);

/// One frame's data for the pose search.
struct FrameInputs {
  const TriMesh* object_template = nullptr;
  const TriMesh* hand = nullptr;  // may be null
  std::span<const MaskImage> masks;
  std::span<const CameraParams> cams;
  /// Translation search region; defaults to default_search_region().
  std::optional<Aabb> search;
};

/// Least-squares point closest to all optical axes.
Vector3d camera_convergence_point(std::span<const CameraParams> cams);

/// Hand bounding box joined with the camera convergence point, grown by
/// `margin` on every side.
Aabb default_search_region(const TriMesh* hand, std::span<const CameraParams> cams, double margin);

/// Loss evaluator at a reduced working resolution. The hand depth is
/// rendered once per view; each evaluation only scans the object.
class LossEvaluator {
 public:
  LossEvaluator(const FrameInputs& inputs, int downscale, double lambda_o);
  double operator()(const Vector6d& alpha) const;
  /// Evaluates all samples in place (parallel, deterministic).
  void evaluate(std::vector<PoseSample>& samples, int threads) const;
  int view_count() const {
    return static_cast<int>(views_.size());
  }

 private:
  struct View {
    CameraParams cam;
    MaskImage mask;
    std::size_t mask_count = 0;
    std::vector<double> hand_depth;
  };
  struct Scratch {
    std::vector<std::uint32_t> stamp;
    std::vector<Vector3d> screen;
    std::vector<Vector3d> posed;
    std::uint32_t counter = 0;
  };
  double evaluate_one(const Vector6d& alpha, Scratch& scratch) const;

  const TriMesh* tmpl_;
  double lambda_o_;
  std::vector<View> views_;
};

/// Parents drawn with replacement with probability proportional to
/// (L_max - L_i) + eps, eps = 1e-6 (L_max - L_min + 1).
std::vector<PoseSample> roulette_select(std::span<const PoseSample> population, int count,
                                        std::mt19937_64& rng);

/// Independent uniform perturbation in [-h, h] per component; the rotation
/// is re-canonicalized. The loss is reset.
PoseSample mutate(const PoseSample& parent, double rotation_half_width,
                  double translation_half_width, std::mt19937_64& rng);

/// Independent generator for (seed, generation, index).
std::mt19937_64 sample_rng(std::uint64_t seed, int generation, int index);

struct PoseEstimate {
  /// Smoothed pose (equal to `best` at the first frame or with alpha 1),
  /// with its loss evaluated at the working resolution.
  PoseSample pose;
  /// Minimum-loss sample of the search.
  PoseSample best;
  /// Best-so-far loss after each generation (index 0 is the initial
  /// population).
  std::vector<double> best_trace;
  int evaluations = 0;
};

/// Genetic search for the object pose. With no previous pose the initial
/// population spans the search region; otherwise it is reseeded around the
/// previous solution.
PoseEstimate estimate_pose(const FrameInputs& inputs, const std::optional<PoseSample>& previous,
                           const GAConfig& cfg);

/// Exponential moving average of two poses with rotation unwrapping.
PoseSample smooth_object_pose(const PoseSample& previous, const PoseSample& current, double alpha);

} // namespace deformcap
