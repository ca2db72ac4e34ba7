#include "deformcap/synthgen.h"

#include "deformcap/errors.h"
#include "deformcap/metrics.h"
#include "deformcap/rasterizer.h"
#include "deformcap/rotation.h"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <random>

namespace deformcap {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

std::mt19937_64 stream(std::uint64_t seed, int a, int b, int salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(salt)};
  return std::mt19937_64(seq);
}

CameraParams look_at(int id, const Vector3d& eye, const Vector3d& target, double focal, int width,
                     int height) {
  const Vector3d z = (target - eye).normalized();
  const Vector3d down(0.0, -1.0, 0.0);
  Vector3d y = down - down.dot(z) * z;
  if (y.norm() < 1e-9) y = Vector3d(0.0, 0.0, 1.0) - z.z() * z;
  y.normalize();
  const Vector3d x = y.cross(z);
  CameraParams cam;
  cam.id = id;
  cam.R.row(0) = x.transpose();
  cam.R.row(1) = y.transpose();
  cam.R.row(2) = z.transpose();
  cam.T = -cam.R * eye;
  cam.K << focal, 0.0, 0.5 * (width - 1), 0.0, focal, 0.5 * (height - 1), 0.0, 0.0, 1.0;
  cam.width = width;
  cam.height = height;
  return cam;
}

struct Bump {
  Vector3d dir;
  double height;
  double width;  // rad
};

const std::array<Bump, 3>& bumps() {
  static const std::array<Bump, 3> b{{
      {Vector3d(1.0, 0.0, 0.15).normalized(), 0.30, 0.30},
      {Vector3d(-0.35, -0.45, 0.82).normalized(), 0.20, 0.35},
      {Vector3d(-0.55, 0.1, -0.83).normalized(), 0.15, 0.25},
  }};
  return b;
}

double surface_radius(const Vector3d& dir, double radius) {
  double r = radius;
  for (const auto& b : bumps()) {
    const double a = std::acos(std::clamp(dir.dot(b.dir), -1.0, 1.0));
    r += radius * b.height * std::exp(-a * a / (2.0 * b.width * b.width));
  }
  return r;
}

double segment_distance(const Vector3d& p, const Vector3d& a, const Vector3d& b) {
  const Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + s * ab)).norm();
}

// Dents the template (object frame) under a capsule: every vertex moves
// inward along its radial direction by the larger of a Gaussian sag and
// the depth that clears the capsule.
TriMesh dent(const TriMesh& tmpl, const Vector3d& contact_dir, double depth, const Vector3d& a,
             const Vector3d& b, double radius, double object_radius) {
  TriMesh out = tmpl;
  if (depth <= 0.0) return out;
  const double sag_width = 0.15 * object_radius;
  for (auto& v : out.vertices) {
    const Vector3d u = v.normalized();
    const double s = std::acos(std::clamp(u.dot(contact_dir), -1.0, 1.0)) * object_radius;
    double push = depth * std::exp(-s * s / (2.0 * sag_width * sag_width));
    if (segment_distance(v - push * u, a, b) < radius) {
      double lo = push;
      double hi = push + 2.0 * radius + depth;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (segment_distance(v - mid * u, a, b) < radius ? lo : hi) = mid;
      }
      push = hi;
    }
    v -= push * u;
  }
  out.compute_normals();
  return out;
}

Vector6d pose_vector(const Matrix3d& r, const Vector3d& t) {
  Vector6d alpha;
  alpha.head<3>() = matrix_to_axis_angle(r);
  alpha.tail<3>() = t;
  return alpha;
}

std::string provenance(const SynthScene& scene) {
  return "synthgen scenario=" + scene.scenario + " seed=" + std::to_string(scene.options.seed) +
         " frames=" + std::to_string(scene.frame_count()) + " views=" + std::to_string(scene.cams.size());
}

// Press and orbit scenarios; without `press` the fingertip stays 20 mm above
// the surface.
SynthScene make_sequence(const SynthOptions& opt, const std::string& scenario, bool press) {
  if (opt.frames < 1) throw InputError("synth: frames must be >= 1");
  if (opt.views < 2) throw InputError("synth: views must be >= 2");
  SynthScene scene;
  scene.scenario = scenario;
  scene.options = opt;
  scene.cams = make_rig(opt.views, opt.rig_radius, opt.width, opt.height);
  scene.hand_model = make_hand_model(opt.fingertip_radius);
  scene.object_template = make_bumpy_sphere(opt.object_radius, opt.subdivisions);

  const Matrix3d r0 = axis_angle_to_matrix(Vector3d(0.0, 0.6, 0.0)) *
                      axis_angle_to_matrix(Vector3d(0.1, 0.0, 0.0));
  const Vector3d t0(4.0, -6.0, 3.0);
  const Matrix3d r_step = axis_angle_to_matrix(Vector3d(0.2, 1.0, 0.1).normalized() * 0.8 * kDeg);
  const Vector3d t_step(0.6, 0.2, -0.5);
  // Contact direction in the object frame: world up at frame 0.
  const Vector3d contact_dir = r0.transpose() * Vector3d::UnitY();
  const double contact_radius = surface_radius(contact_dir, opt.object_radius);

  const HandModel& model = scene.hand_model;
  const Vector3d j7 = model.rest_joints[kIndexDistal];
  const Vector3d j8 = model.rest_joints[kIndexTip];
  const Vector3d axis = (j8 - j7).normalized();
  const Vector3d tip_rest = j8 + opt.fingertip_radius * axis;

  HandPose base = HandPose::rest(kHandJoints);
  // Curl the other fingers; the index chain stays straight.
  for (int finger : {9, 13, 17}) {
    for (int k = 0; k < 3; ++k) base.rotations[finger + k] = Vector3d(-0.35, 0.0, 0.0);
  }
  base.rotations[1] = Vector3d(0.0, 0.0, -0.2);

  Matrix3d r = r0;
  Vector3d t = t0;
  for (int f = 0; f < opt.frames; ++f) {
    if (f > 0) {
      r = r_step * r;
      t += t_step;
    }
    const double depth = press ? (opt.frames > 1 ? opt.max_indentation * f / (opt.frames - 1) : 0.0) : -20.0;
    const Vector3d normal = r * contact_dir;
    const Vector3d contact = r * (contact_dir * contact_radius) + t;
    const Vector3d tip_world = contact - depth * normal;

    HandPose pose = base;
    pose.frame = f;
    pose.translation = tip_world - tip_rest;
    const auto fk = forward_kinematics(model, pose);
    TriMesh hand = skin_hand(model, pose);

    // Capsule in the object frame.
    const Vector3d a_obj = r.transpose() * (fk.bones.world[kIndexDistal].apply(j7) - t);
    const Vector3d b_obj = r.transpose() * (fk.bones.world[kIndexDistal].apply(j8) - t);
    const TriMesh local = dent(scene.object_template, contact_dir, std::max(depth, 0.0), a_obj, b_obj,
                               opt.fingertip_radius, opt.object_radius);
    TriMesh object = transformed(local, r, t);

    std::vector<MaskImage> masks;
    const std::vector<LabeledMesh> meshes{{&hand, PixelLabel::Hand}, {&object, PixelLabel::Object}};
    for (const auto& cam : scene.cams) {
      MaskImage m = object_visible_mask(rasterize(meshes, cam), cam.id);
      if (opt.mask_morph_radius != 0) m = morph_mask(m, opt.mask_morph_radius);
      masks.push_back(std::move(m));
    }

    std::vector<KeypointObservation> kps;
    auto rng = stream(opt.seed, f, 0, 0x6b70);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (const auto& cam : scene.cams) {
      for (int j = 0; j < kHandJoints; ++j) {
        KeypointObservation o;
        o.view = cam.id;
        o.joint = j;
        o.uv = cam.project(fk.skeleton.joints[j]);
        if (opt.keypoint_noise_px > 0.0) {
          o.uv += opt.keypoint_noise_px * Vector2d(noise(rng), noise(rng));
        }
        o.confidence = opt.keypoint_confidence;
        kps.push_back(o);
      }
    }

    scene.hand_poses.push_back(pose);
    scene.object_poses.push_back(pose_vector(r, t));
    scene.indentation.push_back(press ? depth : 0.0);
    scene.hand_meshes.push_back(std::move(hand));
    scene.object_meshes.push_back(std::move(object));
    scene.joints.push_back(fk.skeleton);
    scene.keypoints.push_back(std::move(kps));
    scene.masks.push_back(std::move(masks));
  }
  return scene;
}

} // namespace

std::vector<CameraParams> make_rig(int n_views, double radius_mm, int width, int height) {
  if (n_views < 2) throw InputError("make_rig: n_views must be >= 2");
  if (!(radius_mm > 0.0)) throw InputError("make_rig: radius must be > 0");
  const double focal = width * radius_mm / 600.0;
  std::vector<CameraParams> cams;
  for (int k = 0; k < n_views; ++k) {
    const double az = 2.0 * std::numbers::pi * k / n_views;
    const Vector3d eye(radius_mm * std::cos(az), 0.0, radius_mm * std::sin(az));
    cams.push_back(look_at(k, eye, Vector3d::Zero(), focal, width, height));
  }
  return cams;
}

HandModel make_hand_model(double fingertip_radius) {
  HandModel m;
  m.parents = {-1, 0, 1, 2, 3, 0, 5, 6, 7, 0, 9, 10, 11, 0, 13, 14, 15, 0, 17, 18, 19};
  m.rest_joints = {
      {0, 0, 0},                                                                   // wrist
      {-25, -25, 10}, {-45, -50, 15}, {-58, -72, 18}, {-68, -92, 20},              // thumb
      {-25, -90, 0},  {-27, -130, 0}, {-28, -155, 0}, {-29, -178, 0},              // index
      {0, -92, 0},    {0, -137, 0},   {0, -165, 0},   {0, -190, 0},                // middle
      {22, -88, 0},   {24, -128, 0},  {25, -153, 0},  {26, -175, 0},               // ring
      {42, -80, 0},   {46, -110, 0},  {48, -128, 0},  {50, -146, 0},               // pinky
  };
  m.rest_mesh = make_capsule(m.rest_joints[kIndexDistal], m.rest_joints[kIndexTip], fingertip_radius);
  for (int v = 0; v < static_cast<int>(m.rest_mesh.vertices.size()); ++v) {
    m.weights.push_back({v, kIndexDistal, 1.0});
  }
  return m;
}

TriMesh make_bumpy_sphere(double radius, int subdivisions) {
  TriMesh mesh = make_icosphere(1.0, subdivisions);
  for (auto& v : mesh.vertices) {
    const Vector3d u = v.normalized();
    v = u * surface_radius(u, radius);
  }
  mesh.compute_normals();
  return mesh;
}

SynthScene make_press_sequence(const SynthOptions& options) {
  return make_sequence(options, "press", true);
}

SynthScene make_orbit_sequence(const SynthOptions& options) {
  return make_sequence(options, "orbit", false);
}

fs::path write_scene(const SynthScene& scene, const fs::path& dir) {
  fs::create_directories(dir);
  const std::string prov = provenance(scene);
  SequenceManifest m;
  m.frames = scene.frame_count();
  m.fps = 100.0;
  m.cameras = "cameras.json";
  m.hand_model = "hand_model.json";
  m.object_template = "object_template.obj";
  save_cameras(dir / m.cameras, scene.cams);
  save_hand_model(dir / m.hand_model, scene.hand_model);
  save_mesh(dir / m.object_template, scene.object_template);

  GroundTruth gt;
  gt.provenance = prov;
  for (int f = 0; f < scene.frame_count(); ++f) {
    const fs::path kp = fs::path("keypoints") / ("keypoints_" + std::to_string(f) + ".json");
    save_keypoints(dir / kp, scene.keypoints[f]);
    m.keypoints.push_back(kp);
    std::vector<fs::path> views;
    for (const auto& mask : scene.masks[f]) {
      const fs::path p = fs::path("masks") /
          ("mask_" + std::to_string(f) + "_" + std::to_string(mask.view) + ".pgm");
      save_mask(dir / p, mask);
      views.push_back(p);
    }
    m.masks.push_back(std::move(views));
    save_mesh(dir / "gt" / ("object_" + std::to_string(f) + ".obj"), scene.object_meshes[f],
              "provenance: " + prov + " (ground-truth object surface)");

    GroundTruthFrame g;
    g.frame = f;
    g.object_alpha = scene.object_poses[f];
    g.hand = scene.hand_poses[f];
    g.joints = scene.joints[f].joints;
    g.indentation_mm = scene.indentation[f];
    gt.frames.push_back(std::move(g));
  }
  m.ground_truth = "ground_truth.json";
  save_ground_truth(dir / *m.ground_truth, gt);
  const fs::path manifest = dir / "manifest.json";
  save_manifest(manifest, m);
  return manifest;
}

TriangulationFixture make_table1_fixture(std::uint64_t seed, double noise_px,
                                         const std::vector<int>& view_counts, int points) {
  TriangulationFixture fx;
  auto rng = stream(seed, 0, 0, 0x7431);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  for (int i = 0; i < points; ++i) fx.points.emplace_back(u(rng), u(rng), u(rng));
  for (int n : view_counts) {
    TriangulationFixture::Rig rig;
    rig.views = n;
    rig.cams = make_rig(n, 800.0);
    auto nrng = stream(seed, n, 1, 0x7431);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int i = 0; i < points; ++i) {
      for (const auto& cam : rig.cams) {
        KeypointObservation o;
        o.view = cam.id;
        o.joint = i;
        o.uv = cam.project(fx.points[i]);
        if (noise_px > 0.0) o.uv += noise_px * Vector2d(noise(nrng), noise(nrng));
        o.confidence = 1.0;
        rig.observations.push_back(o);
      }
    }
    fx.rigs.push_back(std::move(rig));
  }
  return fx;
}

void save_table1_fixture(const fs::path& path, const TriangulationFixture& fixture) {
  using json = nlohmann::json;
  json pts = json::array();
  for (const auto& p : fixture.points) pts.push_back({p.x(), p.y(), p.z()});
  json rigs = json::array();
  for (const auto& rig : fixture.rigs) {
    json obs = json::array();
    for (const auto& o : rig.observations) {
      obs.push_back({{"view", o.view}, {"joint", o.joint}, {"uv", {o.uv.x(), o.uv.y()}}, {"conf", o.confidence}});
    }
    json cams = json::array();
    for (const auto& c : rig.cams) {
      json k = json::array();
      json r = json::array();
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          k.push_back(c.K(i, j));
          r.push_back(c.R(i, j));
        }
      }
      cams.push_back({{"id", c.id}, {"K", k}, {"R", r}, {"T", {c.T.x(), c.T.y(), c.T.z()}},
                      {"width", c.width}, {"height", c.height}});
    }
    rigs.push_back({{"views", rig.views}, {"cameras", cams}, {"observations", obs}});
  }
  write_file(path, json({{"provenance", "synthgen scenario=table1"}, {"points", pts}, {"rigs", rigs}}).dump(1) + "\n");
}

TwoBasinScene make_two_basin_scene() {
  TwoBasinScene s;
  s.cams = make_rig(4, 800.0, 256, 192);
  s.object_template = make_icosphere(30.0, 2);
  s.truth << 0.0, 0.0, 0.0, 80.0, 80.0, -80.0;
  s.search.min = Vector3d::Constant(-100.0);
  s.search.max = Vector3d::Constant(100.0);
  const TriMesh object = apply_pose(s.object_template, s.truth);
  const TriMesh decoy = make_icosphere(22.0, 2);
  const auto truth_masks = render_object_masks(object, nullptr, s.cams);
  const auto decoy_masks = render_object_masks(decoy, nullptr, s.cams);
  for (std::size_t v = 0; v < s.cams.size(); ++v) {
    MaskImage m = truth_masks[v];
    for (std::size_t i = 0; i < m.pixels.size(); ++i) m.pixels[i] |= decoy_masks[v].pixels[i];
    s.masks.push_back(std::move(m));
  }
  return s;
}

} // namespace deformcap
