#include "deformcap/metrics.h"

#include "deformcap/contact.h"
#include "deformcap/errors.h"
#include "deformcap/rasterizer.h"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace deformcap {

using json = nlohmann::json;

MiouResult miou(std::span<const MaskImage> pred, std::span<const MaskImage> gt) {
  if (pred.size() != gt.size()) {
    throw InputError("miou: " + std::to_string(pred.size()) + " predicted masks vs " +
                     std::to_string(gt.size()) + " reference masks");
  }
  MiouResult out;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].view != gt[i].view) {
      throw InputError("miou: mask " + std::to_string(i) + " views differ (" + std::to_string(pred[i].view) +
                       " vs " + std::to_string(gt[i].view) + ")");
    }
    const MaskOverlap o = mask_overlap(pred[i], gt[i]);
    if (o.union_ == 0) {
      ++out.skipped;
      continue;
    }
    sum += double(o.intersection) / double(o.union_);
    ++out.pairs;
  }
  out.percent = out.pairs > 0 ? 100.0 * sum / out.pairs : 0.0;
  return out;
}

JointError joint_error(const Skeleton3D& pred, const Skeleton3D& gt) {
  if (pred.size() != gt.size()) {
    throw InputError("joint_error: joint counts differ (" + std::to_string(pred.size()) + " vs " +
                     std::to_string(gt.size()) + ")");
  }
  std::vector<double> d;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const bool pv = j < pred.valid.size() ? pred.valid[j] : true;
    const bool gv = j < gt.valid.size() ? gt.valid[j] : true;
    if (pv && gv) d.push_back((pred.joints[j] - gt.joints[j]).norm());
  }
  if (d.empty()) throw InputError("joint_error: no joint is valid in both skeletons");
  JointError e;
  e.count = static_cast<int>(d.size());
  for (double x : d) e.mean += x;
  e.mean /= e.count;
  for (double x : d) e.std += (x - e.mean) * (x - e.mean);
  e.std = std::sqrt(e.std / e.count);
  return e;
}

std::vector<MaskImage> render_object_masks(const TriMesh& object, const TriMesh* hand,
                                           std::span<const CameraParams> cams) {
  std::vector<LabeledMesh> scene;
  if (hand != nullptr) scene.push_back({hand, PixelLabel::Hand});
  scene.push_back({&object, PixelLabel::Object});
  std::vector<MaskImage> out;
  DepthBuffer buf;
  for (const auto& cam : cams) {
    rasterize_into(scene, cam, buf);
    out.push_back(object_visible_mask(buf, cam.id));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::optional<double> mean_of(const std::vector<FrameMetrics>& frames,
                              std::optional<double> FrameMetrics::*member) {
  double sum = 0.0;
  int n = 0;
  for (const auto& f : frames) {
    if (f.*member) {
      sum += *(f.*member);
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

json opt_json(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> opt_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::string opt_csv(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << std::setprecision(17) << *v;
  return s.str();
}

} // namespace

EvalReport::Aggregate EvalReport::aggregate() const {
  Aggregate a;
  a.joint_error_mean = mean_of(frames, &FrameMetrics::joint_error_mean);
  a.joint_error_std = mean_of(frames, &FrameMetrics::joint_error_std);
  a.miou = mean_of(frames, &FrameMetrics::miou);
  a.intersection_cm3 = mean_of(frames, &FrameMetrics::intersection_cm3);
  for (const auto& f : frames) {
    for (const auto& [stage, s] : f.stage_seconds) a.stage_seconds[stage] += s;
  }
  return a;
}

std::string report_to_json(const EvalReport& report) {
  json frames = json::array();
  for (const auto& f : report.frames) {
    frames.push_back({{"frame", f.frame},
                      {"joint_error_mean_mm", opt_json(f.joint_error_mean)},
                      {"joint_error_std_mm", opt_json(f.joint_error_std)},
                      {"miou_percent", opt_json(f.miou)},
                      {"intersection_cm3", opt_json(f.intersection_cm3)},
                      {"stage_seconds", f.stage_seconds}});
  }
  const auto agg = report.aggregate();
  json ablation = json::array();
  for (const auto& row : report.ablation) {
    ablation.push_back({{"terms", row.terms},
                        {"lambdas", row.lambdas},
                        {"miou_percent", row.miou},
                        {"intersection_cm3", row.intersection_cm3},
                        {"seconds", row.seconds}});
  }
  json j = {{"miou_averaging", report.miou_averaging},
            {"frames", frames},
            {"aggregate",
             {{"joint_error_mean_mm", opt_json(agg.joint_error_mean)},
              {"joint_error_std_mm", opt_json(agg.joint_error_std)},
              {"miou_percent", opt_json(agg.miou)},
              {"intersection_cm3", opt_json(agg.intersection_cm3)},
              {"stage_seconds", agg.stage_seconds}}},
            {"ablation", ablation}};
  return j.dump(1) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    EvalReport r;
    r.miou_averaging = j.value("miou_averaging", r.miou_averaging);
    for (const auto& f : j.at("frames")) {
      FrameMetrics m;
      m.frame = f.at("frame").get<int>();
      m.joint_error_mean = opt_from(f, "joint_error_mean_mm");
      m.joint_error_std = opt_from(f, "joint_error_std_mm");
      m.miou = opt_from(f, "miou_percent");
      m.intersection_cm3 = opt_from(f, "intersection_cm3");
      m.stage_seconds = f.at("stage_seconds").get<std::map<std::string, double>>();
      r.frames.push_back(std::move(m));
    }
    if (j.contains("ablation")) {
      for (const auto& a : j.at("ablation")) {
        AblationRow row;
        row.terms = a.at("terms").get<std::string>();
        row.lambdas = a.at("lambdas").get<std::array<double, kTermCount>>();
        row.miou = a.at("miou_percent").get<double>();
        row.intersection_cm3 = a.at("intersection_cm3").get<double>();
        row.seconds = a.at("seconds").get<double>();
        r.ablation.push_back(row);
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("report: ") + e.what());
  }
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "# miou averaging: " << report.miou_averaging << '\n';
  out << "frame,joint_error_mean_mm,joint_error_std_mm,miou_percent,intersection_cm3\n";
  for (const auto& f : report.frames) {
    out << f.frame << ',' << opt_csv(f.joint_error_mean) << ',' << opt_csv(f.joint_error_std) << ','
        << opt_csv(f.miou) << ',' << opt_csv(f.intersection_cm3) << '\n';
  }
  const auto agg = report.aggregate();
  out << "mean," << opt_csv(agg.joint_error_mean) << ',' << opt_csv(agg.joint_error_std) << ','
      << opt_csv(agg.miou) << ',' << opt_csv(agg.intersection_cm3) << '\n';
  if (!report.ablation.empty()) {
    out << "\nterms,miou_percent,intersection_cm3,seconds\n";
    for (const auto& row : report.ablation) {
      out << '"' << row.terms << "\"," << opt_csv(row.miou) << ',' << opt_csv(row.intersection_cm3) << ','
          << opt_csv(row.seconds) << '\n';
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<std::pair<std::string, std::array<bool, kTermCount>>> ablation_subsets() {
  // Flags in Term order: contact, silhouette, temporal, rigid, regularization.
  return {
      {"Initialization", {false, false, false, false, false}},
      {"E_cont", {true, false, false, false, false}},
      {"E_cont + E_reg", {true, false, false, false, true}},
      {"E_cont + E_reg + E_rigid", {true, false, false, true, true}},
      {"E_cont + E_reg + E_rigid + E_temp", {true, false, true, true, true}},
      {"E_cont + E_reg + E_rigid + E_temp + E_silh", {true, true, true, true, true}},
  };
}

std::vector<AblationRow> run_ablation(const AblationScene& scene, double voxel_mm) {
  std::vector<AblationRow> rows;
  TriMesh posed = scene.posed;
  posed.compute_normals();
  const DeformGraph graph = build_graph(posed, scene.base);
  for (const auto& [name, flags] : ablation_subsets()) {
    const auto start = std::chrono::steady_clock::now();
    AblationRow row;
    row.terms = name;
    TriMesh result = posed;
    if (std::any_of(flags.begin(), flags.end(), [](bool b) { return b; })) {
      DeformConfig cfg = scene.base;
      for (int i = 0; i < kTermCount; ++i) cfg.lambdas[i] = flags[i] ? scene.base.lambdas[i] : 0.0;
      row.lambdas = cfg.lambdas;
      DeformInputs in;
      in.posed = posed;
      in.hand = &scene.hand;
      in.masks = scene.masks;
      in.cams = scene.cams;
      in.previous = scene.previous;
      result = solve_deformation(in, cfg, &graph).deformed;
    }
    const auto masks = render_object_masks(result, &scene.hand, scene.cams);
    std::vector<MaskImage> reference;
    for (const auto& cam : scene.cams) {
      auto it = std::find_if(scene.masks.begin(), scene.masks.end(),
                             [&](const MaskImage& m) { return m.view == cam.id; });
      if (it == scene.masks.end()) throw InputError("ablation: no mask for view " + std::to_string(cam.id));
      reference.push_back(*it);
    }
    row.miou = miou(masks, reference).percent;
    row.intersection_cm3 = intersection_volume(result, scene.hand, voxel_mm);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
  }
  return rows;
}

} // namespace deformcap
