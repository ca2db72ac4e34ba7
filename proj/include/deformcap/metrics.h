#pragma once

#include "deformcap/camera.h"
#include "deformcap/deform.h"
#include "deformcap/hand.h"
#include "deformcap/mesh.h"
#include "deformcap/observations.h"

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace deformcap {

struct MiouResult {
  double percent = 0.0;
  int pairs = 0;    // (frame, view) pairs averaged
  int skipped = 0;  // pairs with an empty union
};

/// Flat mean of |P ∩ G| / |P ∪ G| over aligned mask pairs, in percent.
MiouResult miou(std::span<const MaskImage> pred, std::span<const MaskImage> gt);

struct JointError {
  double mean = 0.0;
  double std = 0.0;  // population
  int count = 0;
};

/// Per-joint Euclidean error over joints valid in both skeletons.
JointError joint_error(const Skeleton3D& pred, const Skeleton3D& gt);

/// Visible-object masks of `object` (occluded by `hand` if given).
std::vector<MaskImage> render_object_masks(const TriMesh& object, const TriMesh* hand,
                                           std::span<const CameraParams> cams);

struct FrameMetrics {
  int frame = 0;
  std::optional<double> joint_error_mean;
  std::optional<double> joint_error_std;
  std::optional<double> miou;
  std::optional<double> intersection_cm3;
  std::map<std::string, double> stage_seconds;
};

struct AblationRow {
  std::string terms;
  std::array<double, kTermCount> lambdas{};
  double miou = 0.0;
  double intersection_cm3 = 0.0;
  double seconds = 0.0;
};

struct EvalReport {
  std::string miou_averaging = "flat mean over (frame, view) pairs";
  std::vector<FrameMetrics> frames;
  std::vector<AblationRow> ablation;

  struct Aggregate {
    std::optional<double> joint_error_mean;
    std::optional<double> joint_error_std;
    std::optional<double> miou;
    std::optional<double> intersection_cm3;
    std::map<std::string, double> stage_seconds;  // totals
  };
  Aggregate aggregate() const;
};

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);
std::string report_to_csv(const EvalReport& report);

/// Scene for the deformation ablation: the rigidly posed template, the hand
/// and the reference masks of one frame.
struct AblationScene {
  TriMesh posed;
  TriMesh hand;
  std::vector<MaskImage> masks;
  std::vector<CameraParams> cams;
  std::optional<std::vector<Vector3d>> previous;
  DeformConfig base;
};

/// Cumulative term subsets in table order: initialization, cont, +reg,
/// +rigid, +temp, +silh.
std::vector<std::pair<std::string, std::array<bool, kTermCount>>> ablation_subsets();

std::vector<AblationRow> run_ablation(const AblationScene& scene, double voxel_mm = 2.0);

} // namespace deformcap
