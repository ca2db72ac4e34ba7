#include "deformcap/scene_io.h"

#include "deformcap/errors.h"
#include "deformcap/log.h"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace deformcap {

using json = nlohmann::json;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out << content;
  if (!out) throw InputError("write failed: " + path.string());
}

namespace {

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError(source + ": " + e.what());
  }
}

json load_json(const fs::path& path) {
  return parse_json(read_file(path), path.string());
}

void save_json(const fs::path& path, const json& j) {
  write_file(path, j.dump(1) + "\n");
}

template <class Fn>
auto field(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw InputError(where + ": " + e.what());
  }
}

Matrix3d mat3(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 9) throw InputError(where + " must hold 9 numbers");
  Matrix3d m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = j[3 * r + c].get<double>();
  }
  return m;
}

json mat3_json(const Matrix3d& m) {
  json j = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) j.push_back(m(r, c));
  }
  return j;
}

template <int N>
Eigen::Matrix<double, N, 1> vec(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != N) {
    throw InputError(where + " must hold " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = j[i].get<double>();
  return v;
}

template <class V>
json vec_json(const V& v) {
  json j = json::array();
  for (int i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

} // namespace

// ---------------------------------------------------------------------------
// Cameras

std::vector<CameraParams> parse_cameras(const std::string& json_text, const std::string& source) {
  const json j = parse_json(json_text, source);
  if (!j.is_array()) throw InputError(source + ": expected an array of cameras");
  std::vector<CameraParams> cams;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = source + ": camera entry " + std::to_string(i);
    CameraParams cam = field(where, [&] {
      const json& e = j[i];
      CameraParams c;
      c.id = e.at("id").get<int>();
      c.K = mat3(e.at("K"), where + " K");
      c.R = mat3(e.at("R"), where + " R");
      c.T = vec<3>(e.at("T"), where + " T");
      c.width = e.at("width").get<int>();
      c.height = e.at("height").get<int>();
      return c;
    });
    cam.validate();
    for (const auto& other : cams) {
      if (other.id == cam.id) throw InputError(source + ": duplicate camera id " + std::to_string(cam.id));
    }
    cams.push_back(cam);
  }
  return cams;
}

std::vector<CameraParams> load_cameras(const fs::path& path) {
  return parse_cameras(read_file(path), path.string());
}

void save_cameras(const fs::path& path, const std::vector<CameraParams>& cams) {
  json j = json::array();
  for (const auto& c : cams) {
    j.push_back({{"id", c.id}, {"K", mat3_json(c.K)}, {"R", mat3_json(c.R)}, {"T", vec_json(c.T)},
                 {"width", c.width}, {"height", c.height}});
  }
  save_json(path, j);
}

// ---------------------------------------------------------------------------
// OBJ

namespace {

int parse_index(std::string_view token, std::size_t vertex_count, const std::string& where) {
  const std::string_view head = token.substr(0, token.find('/'));
  long idx = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), idx);
  if (ec != std::errc() || ptr != head.data() + head.size() || idx == 0) {
    throw InputError(where + ": bad face index '" + std::string(token) + "'");
  }
  const long resolved = idx > 0 ? idx - 1 : static_cast<long>(vertex_count) + idx;
  if (resolved < 0 || resolved >= static_cast<long>(vertex_count)) {
    throw InputError(where + ": face index " + std::to_string(idx) + " out of range");
  }
  return static_cast<int>(resolved);
}

} // namespace

TriMesh parse_obj(std::istream& in, const std::string& source) {
  TriMesh mesh;
  std::string line;
  int line_no = 0;
  bool warned = false;
  std::vector<std::array<std::string, 3>> pending;
  std::vector<int> pending_lines;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vector3d v;
      if (!(ls >> v.x() >> v.y() >> v.z())) {
        throw InputError(source + ": malformed vertex at line " + std::to_string(line_no));
      }
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<std::string> tokens;
      std::string tok;
      while (ls >> tok) tokens.push_back(tok);
      if (tokens.size() != 3) {
        throw InputError(source + ": non-triangular face at line " + std::to_string(line_no));
      }
      pending.push_back({tokens[0], tokens[1], tokens[2]});
      pending_lines.push_back(line_no);
    } else if (!warned) {
      log_warn(source, ": ignoring '", tag, "' records (only v/f are used)");
      warned = true;
    }
  }
  // Faces resolved after all vertices so relative indices follow the file.
  for (std::size_t i = 0; i < pending.size(); ++i) {
    const std::string where = source + " line " + std::to_string(pending_lines[i]);
    Vector3i f;
    for (int k = 0; k < 3; ++k) f[k] = parse_index(pending[i][k], mesh.vertices.size(), where);
    mesh.faces.push_back(f);
  }
  mesh.compute_normals();
  return mesh;
}

TriMesh load_mesh(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  return parse_obj(in, path.string());
}

void save_mesh(const fs::path& path, const TriMesh& mesh, const std::string& header) {
  std::ostringstream out;
  out << std::setprecision(17);
  if (!header.empty()) {
    std::istringstream lines(header);
    std::string line;
    while (std::getline(lines, line)) out << "# " << line << '\n';
  }
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// PGM

MaskImage parse_pgm(const std::string& bytes, int view, const std::string& source) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&](const char* what) {
    skip_space();
    long value = 0;
    const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), value);
    if (ec != std::errc()) throw InputError(source + ": malformed PGM header (" + what + ")");
    pos = ptr - bytes.data();
    return value;
  };
  if (bytes.size() < 2 || bytes[0] != 'P') throw InputError(source + ": malformed PGM header");
  if (bytes[1] != '5') throw InputError(source + ": unsupported PGM variant P" + std::string(1, bytes[1]));
  pos = 2;
  const long w = read_int("width");
  const long h = read_int("height");
  const long maxval = read_int("maxval");
  if (w <= 0 || h <= 0) throw InputError(source + ": malformed PGM header (size)");
  if (maxval != 255) throw InputError(source + ": unsupported PGM variant (maxval " + std::to_string(maxval) + ")");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw InputError(source + ": malformed PGM header");
  }
  ++pos;
  const std::size_t n = std::size_t(w) * std::size_t(h);
  if (bytes.size() - pos < n) throw InputError(source + ": truncated PGM data");
  MaskImage mask(view, static_cast<int>(w), static_cast<int>(h));
  for (std::size_t i = 0; i < n; ++i) {
    mask.pixels[i] = static_cast<unsigned char>(bytes[pos + i]) >= 128 ? 255 : 0;
  }
  return mask;
}

MaskImage load_mask(const fs::path& path, int view) {
  return parse_pgm(read_file(path), view, path.string());
}

void save_mask(const fs::path& path, const MaskImage& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(mask.pixels.data()), mask.pixels.size());
  write_file(path, out);
}

void check_mask_dimensions(const MaskImage& mask, const CameraParams& cam) {
  if (mask.width != cam.width || mask.height != cam.height) {
    throw InputError("mask of view " + std::to_string(mask.view) + " is " + std::to_string(mask.width) + "x" +
                     std::to_string(mask.height) + " but camera " + std::to_string(cam.id) + " is " +
                     std::to_string(cam.width) + "x" + std::to_string(cam.height));
  }
}

// ---------------------------------------------------------------------------
// Keypoints

std::vector<KeypointObservation> load_keypoints(const fs::path& path) {
  const json j = load_json(path);
  if (!j.is_array()) throw InputError(path.string() + ": expected an array of keypoints");
  std::vector<KeypointObservation> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = path.string() + ": keypoint " + std::to_string(i);
    KeypointObservation k = field(where, [&] {
      KeypointObservation o;
      o.view = j[i].at("view").get<int>();
      o.joint = j[i].at("joint").get<int>();
      o.uv = vec<2>(j[i].at("uv"), where + " uv");
      o.confidence = j[i].at("conf").get<double>();
      return o;
    });
    if (!(k.confidence >= 0.0 && k.confidence <= 1.0)) throw InputError(where + ": confidence outside [0,1]");
    if (!k.uv.allFinite()) throw InputError(where + ": uv not finite");
    out.push_back(k);
  }
  return out;
}

void save_keypoints(const fs::path& path, const std::vector<KeypointObservation>& obs) {
  json j = json::array();
  for (const auto& o : obs) {
    j.push_back({{"view", o.view}, {"joint", o.joint}, {"uv", vec_json(o.uv)}, {"conf", o.confidence}});
  }
  save_json(path, j);
}

// ---------------------------------------------------------------------------
// Hand model

HandModel load_hand_model(const fs::path& path) {
  const json j = load_json(path);
  const std::string where = path.string();
  HandModel model = field(where, [&] {
    HandModel m;
    const int joints = j.at("joints").get<int>();
    m.parents = j.at("parents").get<std::vector<int>>();
    const auto& rest = j.at("rest_joints");
    if (static_cast<int>(m.parents.size()) != joints || !rest.is_array() ||
        static_cast<int>(rest.size()) != joints) {
      throw InputError(where + ": parents/rest_joints must have " + std::to_string(joints) + " entries");
    }
    for (const auto& r : rest) m.rest_joints.push_back(vec<3>(r, where + " rest_joints"));
    m.rest_mesh = load_mesh(path.parent_path() / j.at("rest_mesh").get<std::string>());
    for (const auto& w : j.at("weights")) {
      if (!w.is_array() || w.size() != 3) throw InputError(where + ": weights must be [vertex, joint, weight]");
      m.weights.push_back({w[0].get<int>(), w[1].get<int>(), w[2].get<double>()});
    }
    return m;
  });
  if (model.weights.empty()) {
    log_warn(where, ": no skinning weights, using inverse-distance weights");
    model.weights = inverse_distance_weights(model.rest_mesh, model.parents, model.rest_joints);
  }
  model.validate();
  return model;
}

void save_hand_model(const fs::path& path, const HandModel& model, const std::string& mesh_name) {
  json rest = json::array();
  for (const auto& r : model.rest_joints) rest.push_back(vec_json(r));
  json weights = json::array();
  for (const auto& w : model.weights) weights.push_back({w.vertex, w.joint, w.weight});
  save_mesh(path.parent_path() / mesh_name, model.rest_mesh);
  save_json(path, {{"joints", model.joint_count()},
                   {"parents", model.parents},
                   {"rest_joints", rest},
                   {"rest_mesh", mesh_name},
                   {"weights", weights}});
}

// ---------------------------------------------------------------------------
// Manifest

void SequenceManifest::check_files() const {
  auto need = [&](const fs::path& p, const std::string& what) {
    if (!fs::exists(resolve(p))) throw InputError("manifest: missing " + what + " file " + resolve(p).string());
  };
  need(cameras, "cameras");
  need(hand_model, "hand model");
  need(object_template, "object template");
  for (int f = 0; f < frames; ++f) {
    need(keypoints[f], "keypoint (frame " + std::to_string(f) + ")");
    for (std::size_t v = 0; v < masks[f].size(); ++v) {
      need(masks[f][v], "mask (frame " + std::to_string(f) + ", view " + std::to_string(v) + ")");
    }
  }
}

SequenceManifest load_manifest(const fs::path& path) {
  const json j = load_json(path);
  SequenceManifest m = field(path.string(), [&] {
    SequenceManifest s;
    s.frames = j.at("frames").get<int>();
    s.fps = j.value("fps", 0.0);
    s.cameras = j.at("cameras").get<std::string>();
    s.hand_model = j.at("hand_model").get<std::string>();
    s.object_template = j.at("object_template").get<std::string>();
    for (const auto& k : j.at("keypoints")) s.keypoints.emplace_back(k.get<std::string>());
    for (const auto& row : j.at("masks")) {
      std::vector<fs::path> views;
      for (const auto& v : row) views.emplace_back(v.get<std::string>());
      s.masks.push_back(std::move(views));
    }
    if (j.contains("ground_truth")) s.ground_truth = j.at("ground_truth").get<std::string>();
    return s;
  });
  m.base_dir = path.parent_path();
  if (m.frames < 1) throw InputError(path.string() + ": frames must be >= 1");
  if (static_cast<int>(m.keypoints.size()) != m.frames || static_cast<int>(m.masks.size()) != m.frames) {
    throw InputError(path.string() + ": keypoints and masks must list exactly " + std::to_string(m.frames) +
                     " frames, contiguous from 0");
  }
  return m;
}

void save_manifest(const fs::path& path, const SequenceManifest& m) {
  // Entries are rewritten relative to the new manifest location.
  const fs::path dest = fs::absolute(path.parent_path()).lexically_normal();
  auto rel = [&](const fs::path& p) -> std::string {
    if (m.base_dir.empty() && p.is_relative()) return p.generic_string();
    const fs::path target = fs::absolute(m.resolve(p)).lexically_normal();
    const fs::path r = target.lexically_relative(dest);
    return (r.empty() ? target : r).generic_string();
  };
  json keypoints = json::array();
  for (const auto& k : m.keypoints) keypoints.push_back(rel(k));
  json masks = json::array();
  for (const auto& row : m.masks) {
    json views = json::array();
    for (const auto& v : row) views.push_back(rel(v));
    masks.push_back(views);
  }
  json j = {{"frames", m.frames},
            {"fps", m.fps},
            {"cameras", rel(m.cameras)},
            {"hand_model", rel(m.hand_model)},
            {"object_template", rel(m.object_template)},
            {"keypoints", keypoints},
            {"masks", masks}};
  if (m.ground_truth) j["ground_truth"] = rel(*m.ground_truth);
  save_json(path, j);
}

// ---------------------------------------------------------------------------
// Poses

namespace {

json hand_pose_json(const HandPose& pose) {
  json rot = json::array();
  for (const auto& r : pose.rotations) rot.push_back(vec_json(r));
  return {{"rotations", rot}, {"translation", vec_json(pose.translation)}};
}

HandPose hand_pose_from(const json& j, int frame, const std::string& where) {
  HandPose pose;
  pose.frame = frame;
  for (const auto& r : j.at("rotations")) pose.rotations.push_back(vec<3>(r, where + " rotations"));
  pose.translation = vec<3>(j.at("translation"), where + " translation");
  return pose;
}

json number_or_null(double v) {
  return std::isfinite(v) ? json(v) : json(nullptr);
}

} // namespace

fs::path pose_file(const fs::path& dir, int frame) {
  return dir / ("pose_" + std::to_string(frame) + ".json");
}

fs::path object_mesh_file(const fs::path& dir, int frame) {
  return dir / ("object_" + std::to_string(frame) + ".obj");
}

fs::path contact_map_file(const fs::path& dir, int frame) {
  return dir / ("contactmap_" + std::to_string(frame) + ".csv");
}

void save_pose(const fs::path& path, const FramePose& pose) {
  json j = {{"frame", pose.frame}};
  if (pose.hand) j["hand"] = hand_pose_json(*pose.hand);
  if (pose.object) {
    j["object"] = {{"alpha", vec_json(pose.object->alpha)}, {"loss", number_or_null(pose.object->loss)}};
  }
  save_json(path, j);
}

FramePose load_pose(const fs::path& path) {
  const json j = load_json(path);
  const std::string where = path.string();
  return field(where, [&] {
    FramePose p;
    p.frame = j.at("frame").get<int>();
    if (j.contains("hand")) p.hand = hand_pose_from(j.at("hand"), p.frame, where);
    if (j.contains("object")) {
      PoseSample s;
      s.alpha = vec<6>(j.at("object").at("alpha"), where + " alpha");
      const auto& loss = j.at("object").at("loss");
      s.loss = loss.is_null() ? std::numeric_limits<double>::infinity() : loss.get<double>();
      p.object = s;
    }
    return p;
  });
}

// ---------------------------------------------------------------------------
// Contact maps

void save_contact_map(const fs::path& path, const std::vector<double>& displacement) {
  std::ostringstream out;
  out << std::setprecision(17) << "vertex_index,displacement_mm\n";
  for (std::size_t i = 0; i < displacement.size(); ++i) out << i << ',' << displacement[i] << '\n';
  write_file(path, out.str());
}

std::vector<double> load_contact_map(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("missing comma");
      const std::size_t idx = std::stoul(line.substr(0, comma));
      if (idx != out.size()) throw std::invalid_argument("vertex indices must be consecutive");
      out.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception& e) {
      throw InputError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ground truth

void save_ground_truth(const fs::path& path, const GroundTruth& gt) {
  json frames = json::array();
  for (const auto& f : gt.frames) {
    json joints = json::array();
    for (const auto& p : f.joints) joints.push_back(vec_json(p));
    frames.push_back({{"frame", f.frame},
                      {"object_alpha", vec_json(f.object_alpha)},
                      {"hand", hand_pose_json(f.hand)},
                      {"joints", joints},
                      {"indentation_mm", f.indentation_mm}});
  }
  save_json(path, {{"provenance", gt.provenance}, {"frames", frames}});
}

GroundTruth load_ground_truth(const fs::path& path) {
  const json j = load_json(path);
  const std::string where = path.string();
  return field(where, [&] {
    GroundTruth gt;
    gt.provenance = j.at("provenance").get<std::string>();
    for (const auto& f : j.at("frames")) {
      GroundTruthFrame g;
      g.frame = f.at("frame").get<int>();
      g.object_alpha = vec<6>(f.at("object_alpha"), where + " object_alpha");
      g.hand = hand_pose_from(f.at("hand"), g.frame, where);
      for (const auto& p : f.at("joints")) g.joints.push_back(vec<3>(p, where + " joints"));
      g.indentation_mm = f.value("indentation_mm", 0.0);
      gt.frames.push_back(std::move(g));
    }
    return gt;
  });
}

} // namespace deformcap
