#pragma once

#include "deformcap/deform.h"
#include "deformcap/hand.h"
#include "deformcap/metrics.h"
#include "deformcap/object_pose.h"
#include "deformcap/scene_io.h"

#include <optional>
#include <string>
#include <vector>

namespace deformcap {

/// Everything a pipeline run needs besides the manifest.
struct PipelineConfig {
  bool run_hand = true;
  bool run_object = true;
  bool run_deform = true;
  bool run_contact_map = true;
  bool run_eval = true;

  HandSolveConfig hand;
  double hand_smoothing_alpha = 0.7;
  GAConfig ga;
  DeformConfig deform;
  double voxel_mm = 2.0;

  /// Results of disabled stages are read from these directories
  /// (pose_<f>.json for hand/object, object_<f>.obj for meshes).
  std::optional<fs::path> hand_input;
  std::optional<fs::path> object_input;
  std::optional<fs::path> mesh_input;

  fs::path out_dir = "run";
  std::string log_level = "warn";
  bool resume = false;
  /// Optional directory for label-plane PGM dumps of every view.
  std::optional<fs::path> dump_render;

  void validate() const;
};

/// Applies the keys present in `json_text` over `cfg`.
void apply_config_json(PipelineConfig& cfg, const std::string& json_text);
std::string config_to_json(const PipelineConfig& cfg);

/// Loaded sequence-level inputs.
struct SequenceData {
  SequenceManifest manifest;
  std::vector<CameraParams> cams;
  HandModel hand_model;
  TriMesh object_template;
  std::optional<GroundTruth> ground_truth;
};

/// Throws InputError on missing or invalid sequence-level files.
SequenceData load_sequence(const fs::path& manifest_path);
std::vector<KeypointObservation> load_frame_keypoints(const SequenceData& seq, int frame);
std::vector<MaskImage> load_frame_masks(const SequenceData& seq, int frame);

/// Triangulates, fits and smooths one frame's hand pose. `history` holds
/// the earlier smoothed poses.
HandPose track_hand_frame(const SequenceData& seq, std::span<const KeypointObservation> keypoints,
                          std::span<const HandPose> history, const PipelineConfig& cfg, int frame);

struct PipelineSummary {
  int frames_processed = 0;
  int frames_skipped = 0;
  EvalReport report;
};

/// Runs all enabled stages frame by frame, writing pose_<f>.json,
/// object_<f>.obj, energy_<f>.csv, contactmap_<f>.csv and report.json
/// into cfg.out_dir. Stage failures throw StageError naming the frame and
/// stage; bad inputs throw InputError.
PipelineSummary run_pipeline(const fs::path& manifest_path, const PipelineConfig& cfg);

/// Metrics of a finished run against the manifest's masks and ground truth.
EvalReport evaluate_run(const SequenceData& seq, const fs::path& pred_dir, double voxel_mm = 2.0);

} // namespace deformcap
