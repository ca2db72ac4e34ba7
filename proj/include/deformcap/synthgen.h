#pragma once

#include "deformcap/camera.h"
#include "deformcap/hand.h"
#include "deformcap/mesh.h"
#include "deformcap/object_pose.h"
#include "deformcap/observations.h"
#include "deformcap/scene_io.h"

#include <cstdint>
#include <string>
#include <vector>

namespace deformcap {

inline constexpr int kHandJoints = 21;
/// Joint of the index fingertip bone carrying the fingertip proxy.
inline constexpr int kIndexDistal = 7;
inline constexpr int kIndexTip = 8;

/// Ring of `n_views` cameras at height 0 looking at the origin. The focal
/// length makes a 200 mm object span a third of the image width.
std::vector<CameraParams> make_rig(int n_views, double radius_mm, int width = 1024, int height = 768);

/// 21-joint hand skeleton (wrist, then thumb/index/middle/ring/pinky with 4
/// joints each, fingers along -y). The rest mesh is a capsule around the
/// index fingertip bone, fully weighted to that bone.
HandModel make_hand_model(double fingertip_radius = 15.0);

/// Icosphere with three asymmetric radial bumps (rotation observable from
/// silhouettes). Centered at the origin.
TriMesh make_bumpy_sphere(double radius, int subdivisions);

struct SynthOptions {
  int frames = 10;
  int views = 10;
  std::uint64_t seed = 7;
  double rig_radius = 800.0;
  int width = 1024;
  int height = 768;
  double object_radius = 100.0;
  int subdivisions = 4;
  double fingertip_radius = 15.0;
  double max_indentation = 8.0;  // mm, reached at the last frame
  double keypoint_noise_px = 0.0;
  double keypoint_confidence = 0.9;
  int mask_morph_radius = 0;
};

/// Generated sequence with exact ground truth.
struct SynthScene {
  std::string scenario;
  SynthOptions options;
  std::vector<CameraParams> cams;
  HandModel hand_model;
  TriMesh object_template;
  std::vector<HandPose> hand_poses;
  std::vector<Vector6d> object_poses;
  std::vector<double> indentation;
  std::vector<TriMesh> hand_meshes;
  /// Ground-truth object surfaces (posed, with the press dent).
  std::vector<TriMesh> object_meshes;
  std::vector<Skeleton3D> joints;
  std::vector<std::vector<KeypointObservation>> keypoints;
  std::vector<std::vector<MaskImage>> masks;

  int frame_count() const {
    return static_cast<int>(object_poses.size());
  }
};

/// Fingertip presses the object top: zero indentation at frame 0, rising
/// linearly to max_indentation at the last frame. The object rotates by at
/// most 1 degree and moves at most 1 mm per frame.
SynthScene make_press_sequence(const SynthOptions& options);

/// Same rig and object moving rigidly; the fingertip follows 20 mm above
/// the object without contact.
SynthScene make_orbit_sequence(const SynthOptions& options);

/// Writes cameras, hand model, template, keypoints, masks and ground truth
/// under `dir` and returns the manifest path.
fs::path write_scene(const SynthScene& scene, const fs::path& dir);

/// Random points observed by rigs of several sizes.
struct TriangulationFixture {
  std::vector<Vector3d> points;
  struct Rig {
    int views = 0;
    std::vector<CameraParams> cams;
    /// Observation of point i uses joint index i.
    std::vector<KeypointObservation> observations;
  };
  std::vector<Rig> rigs;
};

TriangulationFixture make_table1_fixture(std::uint64_t seed, double noise_px,
                                         const std::vector<int>& view_counts = {4, 6, 8, 10},
                                         int points = 100);
void save_table1_fixture(const fs::path& path, const TriangulationFixture& fixture);

/// Object silhouettes with a global basin (the true pose near a corner of
/// the search box) and a decoy blob at the box center.
struct TwoBasinScene {
  TriMesh object_template;
  std::vector<CameraParams> cams;
  std::vector<MaskImage> masks;
  Vector6d truth = Vector6d::Zero();
  Aabb search;
};

TwoBasinScene make_two_basin_scene();

} // namespace deformcap
