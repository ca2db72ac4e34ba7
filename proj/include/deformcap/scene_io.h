#pragma once

#include "deformcap/camera.h"
#include "deformcap/hand.h"
#include "deformcap/mesh.h"
#include "deformcap/object_pose.h"
#include "deformcap/observations.h"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace deformcap {

namespace fs = std::filesystem;

// Cameras: JSON array of {id, K[9], R[9], T[3], width, height}.
std::vector<CameraParams> load_cameras(const fs::path& path);
std::vector<CameraParams> parse_cameras(const std::string& json_text, const std::string& source = "cameras");
void save_cameras(const fs::path& path, const std::vector<CameraParams>& cams);

// Wavefront OBJ with v/f records only.
TriMesh load_mesh(const fs::path& path);
TriMesh parse_obj(std::istream& in, const std::string& source = "obj");
/// `header` lines are written as OBJ comments.
void save_mesh(const fs::path& path, const TriMesh& mesh, const std::string& header = "");

// Binary PGM (P5, maxval 255), thresholded at 128.
MaskImage load_mask(const fs::path& path, int view = 0);
MaskImage parse_pgm(const std::string& bytes, int view, const std::string& source = "pgm");
void save_mask(const fs::path& path, const MaskImage& mask);
/// Throws InputError when the mask size differs from the camera's.
void check_mask_dimensions(const MaskImage& mask, const CameraParams& cam);

// Keypoints: JSON array of {view, joint, uv[2], conf}.
std::vector<KeypointObservation> load_keypoints(const fs::path& path);
void save_keypoints(const fs::path& path, const std::vector<KeypointObservation>& obs);

// Hand model: {joints, parents, rest_joints, rest_mesh, weights}.
HandModel load_hand_model(const fs::path& path);
/// Writes the JSON and the rest mesh next to it as `mesh_name`.
void save_hand_model(const fs::path& path, const HandModel& model, const std::string& mesh_name = "hand_rest.obj");

/// Sequence description. Paths are stored relative to the manifest file
/// and resolved on load.
struct SequenceManifest {
  int frames = 0;
  double fps = 0.0;
  fs::path cameras;
  fs::path hand_model;
  fs::path object_template;
  std::vector<fs::path> keypoints;           // per frame
  std::vector<std::vector<fs::path>> masks;  // per frame, per view
  std::optional<fs::path> ground_truth;
  fs::path base_dir;

  fs::path resolve(const fs::path& p) const {
    return p.is_absolute() ? p : base_dir / p;
  }
  /// Throws InputError if a referenced file is missing.
  void check_files() const;
};

SequenceManifest load_manifest(const fs::path& path);
void save_manifest(const fs::path& path, const SequenceManifest& manifest);

/// Per-frame pose output.
struct FramePose {
  int frame = 0;
  std::optional<HandPose> hand;
  std::optional<PoseSample> object;
};

void save_pose(const fs::path& path, const FramePose& pose);
FramePose load_pose(const fs::path& path);
fs::path pose_file(const fs::path& dir, int frame);
fs::path object_mesh_file(const fs::path& dir, int frame);
fs::path contact_map_file(const fs::path& dir, int frame);

/// Lines "vertex_index,displacement_mm" after a header.
void save_contact_map(const fs::path& path, const std::vector<double>& displacement);
std::vector<double> load_contact_map(const fs::path& path);

/// Ground truth of synthetic scenes.
struct GroundTruthFrame {
  int frame = 0;
  Vector6d object_alpha = Vector6d::Zero();
  HandPose hand;
  std::vector<Vector3d> joints;
  double indentation_mm = 0.0;
};

struct GroundTruth {
  std::string provenance;
  std::vector<GroundTruthFrame> frames;
};

void save_ground_truth(const fs::path& path, const GroundTruth& gt);
GroundTruth load_ground_truth(const fs::path& path);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& content);

} // namespace deformcap
