#include "deformcap/pipeline.h"

#include "deformcap/contact.h"
#include "deformcap/errors.h"
#include "deformcap/log.h"
#include "deformcap/rasterizer.h"

#include <json.hpp>

#include <chrono>
#include <set>

namespace deformcap {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
  ga.validate();
  deform.validate();
  if (!(hand.conf_threshold >= 0.0 && hand.conf_threshold <= 1.0)) {
    throw InputError("config: hand confidence threshold must be in [0, 1]");
  }
  if (!(hand_smoothing_alpha > 0.0 && hand_smoothing_alpha <= 1.0)) {
    throw InputError("config: hand smoothing alpha must be in (0, 1]");
  }
  if (!(voxel_mm > 0.0)) throw InputError("config: voxel_mm must be > 0");
  for (const auto* dir : {&hand_input, &object_input, &mesh_input}) {
    if (*dir && !fs::is_directory(**dir)) throw InputError("config: no such directory " + (*dir)->string());
  }
  parse_log_level(log_level);
}

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InputError("config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw InputError("config: unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

} // namespace

void apply_config_json(PipelineConfig& cfg, const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("config: ") + e.what());
  }
  try {
    check_keys(j, {"stages", "hand", "object_pose", "deform", "voxel_mm", "log_level"}, "config");
    if (j.contains("stages")) {
      const auto& s = j.at("stages");
      check_keys(s, {"hand", "object_pose", "deform", "contact_map", "eval"}, "stages");
      read(s, "hand", cfg.run_hand);
      read(s, "object_pose", cfg.run_object);
      read(s, "deform", cfg.run_deform);
      read(s, "contact_map", cfg.run_contact_map);
      read(s, "eval", cfg.run_eval);
    }
    if (j.contains("hand")) {
      const auto& h = j.at("hand");
      check_keys(h, {"conf_thresh", "loss", "huber_delta_px", "huber_delta_mm", "max_iterations", "smooth_alpha"},
                 "hand");
      read(h, "conf_thresh", cfg.hand.conf_threshold);
      if (h.contains("loss")) {
        const auto loss = h.at("loss").get<std::string>();
        if (loss == "huber") {
          cfg.hand.loss = RobustLoss::Huber;
        } else if (loss == "l2") {
          cfg.hand.loss = RobustLoss::SquaredL2;
        } else {
          throw InputError("config: hand.loss must be huber or l2");
        }
      }
      read(h, "huber_delta_px", cfg.hand.huber_delta_px);
      read(h, "huber_delta_mm", cfg.hand.huber_delta_mm);
      read(h, "max_iterations", cfg.hand.max_iterations);
      read(h, "smooth_alpha", cfg.hand_smoothing_alpha);
    }
    if (j.contains("object_pose")) {
      const auto& o = j.at("object_pose");
      check_keys(o, {"population", "iterations", "tracking_iterations", "init", "rotation_half_width",
                     "translation_half_width", "decay", "tracking_rotation_half_width",
                     "tracking_translation_half_width", "lambda_o", "seed", "working_downscale",
                     "search_margin", "smooth_alpha", "threads"},
                 "object_pose");
      read(o, "population", cfg.ga.population_size);
      read(o, "iterations", cfg.ga.iterations);
      read(o, "tracking_iterations", cfg.ga.tracking_iterations);
      if (o.contains("init")) cfg.ga.init = parse_init_distribution(o.at("init").get<std::string>());
      read(o, "rotation_half_width", cfg.ga.rotation_half_width);
      read(o, "translation_half_width", cfg.ga.translation_half_width);
      read(o, "decay", cfg.ga.decay);
      read(o, "tracking_rotation_half_width", cfg.ga.tracking_rotation_half_width);
      read(o, "tracking_translation_half_width", cfg.ga.tracking_translation_half_width);
      read(o, "lambda_o", cfg.ga.lambda_o);
      read(o, "seed", cfg.ga.seed);
      read(o, "working_downscale", cfg.ga.working_downscale);
      read(o, "search_margin", cfg.ga.search_margin);
      read(o, "smooth_alpha", cfg.ga.smoothing_alpha);
      read(o, "threads", cfg.ga.threads);
    }
    if (j.contains("deform")) {
      const auto& d = j.at("deform");
      check_keys(d, {"lambdas", "node_spacing", "neighbors", "outer_iterations", "inner_iterations",
                     "lambda_c", "silhouette_gate_px"},
                 "deform");
      read(d, "lambdas", cfg.deform.lambdas);
      read(d, "node_spacing", cfg.deform.node_spacing);
      read(d, "neighbors", cfg.deform.neighbors);
      read(d, "outer_iterations", cfg.deform.outer_iterations);
      read(d, "inner_iterations", cfg.deform.inner_iterations);
      read(d, "lambda_c", cfg.deform.lambda_c);
      read(d, "silhouette_gate_px", cfg.deform.silhouette_gate_px);
    }
    read(j, "voxel_mm", cfg.voxel_mm);
    read(j, "log_level", cfg.log_level);
  } catch (const json::exception& e) {
    throw InputError(std::string("config: ") + e.what());
  }
}

std::string config_to_json(const PipelineConfig& cfg) {
  const json j = {
      {"stages",
       {{"hand", cfg.run_hand},
        {"object_pose", cfg.run_object},
        {"deform", cfg.run_deform},
        {"contact_map", cfg.run_contact_map},
        {"eval", cfg.run_eval}}},
      {"hand",
       {{"conf_thresh", cfg.hand.conf_threshold},
        {"loss", cfg.hand.loss == RobustLoss::Huber ? "huber" : "l2"},
        {"huber_delta_px", cfg.hand.huber_delta_px},
        {"huber_delta_mm", cfg.hand.huber_delta_mm},
        {"max_iterations", cfg.hand.max_iterations},
        {"smooth_alpha", cfg.hand_smoothing_alpha}}},
      {"object_pose",
       {{"population", cfg.ga.population_size},
        {"iterations", cfg.ga.iterations},
        {"tracking_iterations", cfg.ga.tracking_iterations},
        {"init", init_distribution_name(cfg.ga.init)},
        {"rotation_half_width", cfg.ga.rotation_half_width},
        {"translation_half_width", cfg.ga.translation_half_width},
        {"decay", cfg.ga.decay},
        {"tracking_rotation_half_width", cfg.ga.tracking_rotation_half_width},
        {"tracking_translation_half_width", cfg.ga.tracking_translation_half_width},
        {"lambda_o", cfg.ga.lambda_o},
        {"seed", cfg.ga.seed},
        {"working_downscale", cfg.ga.working_downscale},
        {"search_margin", cfg.ga.search_margin},
        {"smooth_alpha", cfg.ga.smoothing_alpha},
        {"threads", cfg.ga.threads}}},
      {"deform",
       {{"lambdas", cfg.deform.lambdas},
        {"node_spacing", cfg.deform.node_spacing},
        {"neighbors", cfg.deform.neighbors},
        {"outer_iterations", cfg.deform.outer_iterations},
        {"inner_iterations", cfg.deform.inner_iterations},
        {"lambda_c", cfg.deform.lambda_c},
        {"silhouette_gate_px", cfg.deform.silhouette_gate_px}}},
      {"voxel_mm", cfg.voxel_mm},
      {"log_level", cfg.log_level}};
  return j.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Inputs

SequenceData load_sequence(const fs::path& manifest_path) {
  SequenceData seq;
  seq.manifest = load_manifest(manifest_path);
  const auto& m = seq.manifest;
  seq.cams = load_cameras(m.resolve(m.cameras));
  seq.hand_model = load_hand_model(m.resolve(m.hand_model));
  seq.object_template = load_mesh(m.resolve(m.object_template));
  require_watertight(seq.object_template, "object template");
  if (euler_characteristic(seq.object_template) != 2) {
    throw InputError("object template is not genus 0 (V - E + F = " +
                     std::to_string(euler_characteristic(seq.object_template)) + ")");
  }
  if (!seq.hand_model.rest_mesh.faces.empty()) require_watertight(seq.hand_model.rest_mesh, "hand mesh");
  if (m.ground_truth) seq.ground_truth = load_ground_truth(m.resolve(*m.ground_truth));
  return seq;
}

std::vector<KeypointObservation> load_frame_keypoints(const SequenceData& seq, int frame) {
  const auto& m = seq.manifest;
  auto obs = load_keypoints(m.resolve(m.keypoints.at(frame)));
  for (const auto& o : obs) {
    camera_by_id(seq.cams, o.view);
    if (o.joint < 0 || o.joint >= seq.hand_model.joint_count()) {
      throw InputError("keypoint joint " + std::to_string(o.joint) + " out of range");
    }
  }
  return obs;
}

std::vector<MaskImage> load_frame_masks(const SequenceData& seq, int frame) {
  const auto& m = seq.manifest;
  std::vector<MaskImage> masks;
  const auto& paths = m.masks.at(frame);
  if (paths.size() != seq.cams.size()) {
    throw InputError("frame " + std::to_string(frame) + " lists " + std::to_string(paths.size()) +
                     " masks for " + std::to_string(seq.cams.size()) + " cameras");
  }
  for (std::size_t v = 0; v < paths.size(); ++v) {
    MaskImage mask = load_mask(m.resolve(paths[v]), seq.cams[v].id);
    check_mask_dimensions(mask, seq.cams[v]);
    masks.push_back(std::move(mask));
  }
  return masks;
}

HandPose track_hand_frame(const SequenceData& seq, std::span<const KeypointObservation> keypoints,
                          std::span<const HandPose> history, const PipelineConfig& cfg, int frame) {
  const HandModel& model = seq.hand_model;
  const Skeleton3D kp3d =
      triangulate_skeleton(keypoints, seq.cams, model.joint_count(), cfg.hand.conf_threshold);
  for (int j : bone_length_outliers(model, kp3d)) {
    log_info("frame ", frame, ": joint ", j, " bone length deviates from the template");
  }
  HandPose init = history.empty() ? HandPose::rest(model.joint_count(), frame) : history.back();
  init.frame = frame;
  if (history.empty()) {
    // Start from the rest pose moved onto the triangulated joints.
    Vector3d offset = Vector3d::Zero();
    int n = 0;
    for (int j = 0; j < model.joint_count(); ++j) {
      if (kp3d.valid[j]) {
        offset += kp3d.joints[j] - model.rest_joints[j];
        ++n;
      }
    }
    if (n > 0) init.translation = offset / n;
  }
  const HandSolveResult fit = solve_hand_pose(model, kp3d, keypoints, seq.cams, init, cfg.hand);
  if (!fit.pose.finite()) throw StageError("hand pose fit diverged");
  HandPose pose = history.empty() ? fit.pose : smooth_pose(history, fit.pose, cfg.hand_smoothing_alpha);
  pose.frame = frame;
  return pose;
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class Fn>
auto stage(int frame, const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw StageError("frame " + std::to_string(frame) + ", stage " + name + ": " + e.what());
  }
}

std::uint64_t frame_seed(std::uint64_t seed, int frame) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(frame);
}

// Previous deformed surface expressed in the current rigid pose.
std::vector<Vector3d> carry_over(const TriMesh& deformed, const Vector6d& from, const Vector6d& to) {
  const Matrix3d r_from = axis_angle_to_matrix(from.head<3>());
  const Matrix3d r_to = axis_angle_to_matrix(to.head<3>());
  std::vector<Vector3d> out;
  out.reserve(deformed.vertices.size());
  for (const auto& v : deformed.vertices) {
    out.push_back(r_to * (r_from.transpose() * (v - from.tail<3>())) + to.tail<3>());
  }
  return out;
}

bool frame_complete(const PipelineConfig& cfg, int f) {
  const fs::path& out = cfg.out_dir;
  if (!fs::exists(pose_file(out, f))) return false;
  const bool has_object = cfg.run_object || cfg.object_input;
  if (has_object && !fs::exists(object_mesh_file(out, f))) return false;
  if (cfg.run_contact_map && has_object && !fs::exists(contact_map_file(out, f))) return false;
  return true;
}

} // namespace

PipelineSummary run_pipeline(const fs::path& manifest_path, const PipelineConfig& cfg) {
  cfg.validate();
  set_log_level(parse_log_level(cfg.log_level));
  const SequenceData seq = load_sequence(manifest_path);
  fs::create_directories(cfg.out_dir);
  write_file(cfg.out_dir / "config.json", config_to_json(cfg));
  log_info("effective config:\n", config_to_json(cfg));

  PipelineSummary summary;
  std::vector<HandPose> hand_history;
  std::optional<PoseSample> previous_object;
  std::optional<TriMesh> previous_deformed;
  std::vector<std::map<std::string, double>> timings(seq.manifest.frames);

  for (int f = 0; f < seq.manifest.frames; ++f) {
    if (cfg.resume && frame_complete(cfg, f)) {
      // Restore the state carried into the next frame.
      const FramePose done = stage(f, "resume", [&] { return load_pose(pose_file(cfg.out_dir, f)); });
      if (done.hand) hand_history.push_back(*done.hand);
      if (done.object) {
        previous_object = done.object;
        previous_deformed = stage(f, "resume", [&] { return load_mesh(object_mesh_file(cfg.out_dir, f)); });
      }
      ++summary.frames_skipped;
      continue;
    }
    FramePose out;
    out.frame = f;

    // Hand.
    std::optional<TriMesh> hand_mesh;
    auto t0 = Clock::now();
    if (cfg.run_hand) {
      out.hand = stage(f, "hand-capture", [&] {
        const auto kps = load_frame_keypoints(seq, f);
        return track_hand_frame(seq, kps, hand_history, cfg, f);
      });
    } else if (cfg.hand_input) {
      out.hand = stage(f, "hand-capture", [&] {
        auto p = load_pose(pose_file(*cfg.hand_input, f));
        if (!p.hand) throw InputError("pose file has no hand entry");
        return *p.hand;
      });
    }
    if (out.hand) {
      hand_history.push_back(*out.hand);
      hand_mesh = stage(f, "hand-capture", [&] { return skin_hand(seq.hand_model, *out.hand); });
    }
    timings[f]["hand-capture"] = seconds_since(t0);
    const TriMesh* hand_ptr = hand_mesh && !hand_mesh->faces.empty() ? &*hand_mesh : nullptr;

    // Object pose.
    std::vector<MaskImage> masks;
    t0 = Clock::now();
    if (cfg.run_object) {
      out.object = stage(f, "object-pose", [&] {
        masks = load_frame_masks(seq, f);
        FrameInputs in;
        in.object_template = &seq.object_template;
        in.hand = hand_ptr;
        in.masks = masks;
        in.cams = seq.cams;
        GAConfig ga = cfg.ga;
        ga.seed = frame_seed(cfg.ga.seed, f);
        return estimate_pose(in, previous_object, ga).pose;
      });
    } else if (cfg.object_input) {
      out.object = stage(f, "object-pose", [&] {
        auto p = load_pose(pose_file(*cfg.object_input, f));
        if (!p.object) throw InputError("pose file has no object entry");
        return *p.object;
      });
    }
    timings[f]["object-pose"] = seconds_since(t0);

    if (out.object) {
      const TriMesh posed = apply_pose(seq.object_template, out.object->alpha);
      TriMesh deformed = posed;
      t0 = Clock::now();
      if (cfg.run_deform) {
        deformed = stage(f, "deform", [&] {
          if (masks.empty()) masks = load_frame_masks(seq, f);
          DeformInputs in;
          in.posed = posed;
          in.hand = hand_ptr;
          in.masks = masks;
          in.cams = seq.cams;
          if (previous_deformed && previous_object) {
            in.previous = carry_over(*previous_deformed, previous_object->alpha, out.object->alpha);
          }
          DeformResult res = solve_deformation(in, cfg.deform);
          write_file(cfg.out_dir / ("energy_" + std::to_string(f) + ".csv"), energy_trace_csv(res.trace));
          return res.deformed;
        });
      } else if (cfg.mesh_input) {
        deformed = stage(f, "deform", [&] { return load_mesh(object_mesh_file(*cfg.mesh_input, f)); });
      }
      timings[f]["deform"] = seconds_since(t0);

      t0 = Clock::now();
      if (cfg.run_contact_map) {
        stage(f, "contact-map", [&] {
          save_contact_map(contact_map_file(cfg.out_dir, f), compute_contact_map(posed, deformed));
          return 0;
        });
      }
      timings[f]["contact-map"] = seconds_since(t0);
      save_mesh(object_mesh_file(cfg.out_dir, f), deformed);

      if (cfg.dump_render) {
        std::vector<LabeledMesh> scene;
        if (hand_ptr) scene.push_back({hand_ptr, PixelLabel::Hand});
        scene.push_back({&deformed, PixelLabel::Object});
        for (const auto& cam : seq.cams) {
          save_mask(*cfg.dump_render / ("render_" + std::to_string(f) + "_" + std::to_string(cam.id) + ".pgm"),
                    label_image(rasterize(scene, cam), cam.id));
        }
      }
      previous_object = out.object;
      previous_deformed = std::move(deformed);
    }
    // The pose file marks the frame as complete.
    save_pose(pose_file(cfg.out_dir, f), out);
    ++summary.frames_processed;
    log_info("frame ", f, " done");
  }

  if (cfg.run_eval) {
    summary.report = stage(seq.manifest.frames - 1, "eval", [&] { return evaluate_run(seq, cfg.out_dir, cfg.voxel_mm); });
    write_file(cfg.out_dir / "report.json", report_to_json(summary.report));
  }
  // Wall-clock times live apart from the deterministic outputs.
  json t = json::array();
  for (int f = 0; f < seq.manifest.frames; ++f) t.push_back({{"frame", f}, {"stage_seconds", timings[f]}});
  write_file(cfg.out_dir / "timings.json", t.dump(1) + "\n");
  for (int f = 0; f < static_cast<int>(summary.report.frames.size()); ++f) {
    summary.report.frames[f].stage_seconds = timings[summary.report.frames[f].frame];
  }
  return summary;
}

EvalReport evaluate_run(const SequenceData& seq, const fs::path& pred_dir, double voxel_mm) {
  EvalReport report;
  for (int f = 0; f < seq.manifest.frames; ++f) {
    if (!fs::exists(pose_file(pred_dir, f))) continue;
    const FramePose pose = load_pose(pose_file(pred_dir, f));
    FrameMetrics m;
    m.frame = f;
    std::optional<TriMesh> hand;
    if (pose.hand) {
      hand = skin_hand(seq.hand_model, *pose.hand);
      if (seq.ground_truth && f < static_cast<int>(seq.ground_truth->frames.size())) {
        Skeleton3D gt;
        gt.joints = seq.ground_truth->frames[f].joints;
        gt.valid.assign(gt.joints.size(), true);
        const auto e = joint_error(forward_kinematics(seq.hand_model, *pose.hand).skeleton, gt);
        m.joint_error_mean = e.mean;
        m.joint_error_std = e.std;
      }
    }
    const TriMesh* hand_ptr = hand && !hand->faces.empty() ? &*hand : nullptr;
    std::optional<TriMesh> object;
    if (fs::exists(object_mesh_file(pred_dir, f))) {
      object = load_mesh(object_mesh_file(pred_dir, f));
    } else if (pose.object) {
      object = apply_pose(seq.object_template, pose.object->alpha);
    }
    if (object) {
      const auto masks = load_frame_masks(seq, f);
      m.miou = miou(render_object_masks(*object, hand_ptr, seq.cams), masks).percent;
      if (hand_ptr) m.intersection_cm3 = intersection_volume(*object, *hand_ptr, voxel_mm);
    }
    report.frames.push_back(std::move(m));
  }
  return report;
}

} // namespace deformcap
