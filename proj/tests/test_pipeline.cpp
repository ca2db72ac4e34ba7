#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deformcap/errors.h"
#include "deformcap/pipeline.h"
#include "deformcap/synthgen.h"
#include "test_support.h"

using namespace deformcap;

namespace {

constexpr int kFrames = 3;

const fs::path& scene_manifest() {
  static const fs::path path = [] {
    SynthOptions opt;
    opt.frames = kFrames;
    opt.views = 4;
    opt.width = 256;
    opt.height = 192;
    opt.subdivisions = 3;
    return write_scene(make_press_sequence(opt), testing::scratch_dir("pipeline_scene"));
  }();
  return path;
}

PipelineConfig small_config(const fs::path& out) {
  PipelineConfig cfg;
  cfg.ga.population_size = 60;
  cfg.ga.iterations = 5;
  cfg.ga.threads = 1;
  cfg.deform.outer_iterations = 1;
  cfg.deform.inner_iterations = 3;
  cfg.out_dir = out;
  return cfg;
}

// Every output except the wall-clock timings.
std::map<std::string, std::string> outputs(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name != "timings.json") files[name] = read_file(e.path());
  }
  return files;
}

const fs::path& reference_run() {
  static const fs::path out = [] {
    const fs::path dir = testing::scratch_dir("pipeline_ref");
    run_pipeline(scene_manifest(), small_config(dir));
    return dir;
  }();
  return out;
}

} // namespace

TEST_CASE("a small run writes every per-frame output and a report") {
  const fs::path& out = reference_run();
  for (int f = 0; f < kFrames; ++f) {
    CHECK(fs::exists(pose_file(out, f)));
    CHECK(fs::exists(object_mesh_file(out, f)));
    CHECK(fs::exists(contact_map_file(out, f)));
    CHECK(fs::exists(out / ("energy_" + std::to_string(f) + ".csv")));
    const FramePose p = load_pose(pose_file(out, f));
    CHECK(p.frame == f);
    CHECK(p.hand);
    CHECK(p.object);
  }
  CHECK(fs::exists(out / "timings.json"));
  CHECK(fs::exists(out / "config.json"));
  const EvalReport r = report_from_json(read_file(out / "report.json"));
  REQUIRE(r.frames.size() == kFrames);
  for (const auto& fm : r.frames) {
    CHECK(fm.miou);
    CHECK(*fm.miou > 50.0);
    CHECK(fm.joint_error_mean);
    CHECK(fm.intersection_cm3);
  }
  const TriMesh m = load_mesh(object_mesh_file(out, 0));
  CHECK(m.vertices.size() == load_mesh(scene_manifest().parent_path() / "object_template.obj").vertices.size());
}

TEST_CASE("runs are reproducible and resume to identical outputs") {
  const fs::path& ref = reference_run();
  const fs::path again = testing::scratch_dir("pipeline_again");
  run_pipeline(scene_manifest(), small_config(again));
  CHECK(outputs(again) == outputs(ref));

  // Interrupt after frame 0: drop the later frames' outputs and resume.
  const fs::path resumed = testing::scratch_dir("pipeline_resume");
  fs::copy(ref, resumed, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  for (int f = 1; f < kFrames; ++f) {
    fs::remove(pose_file(resumed, f));
    fs::remove(object_mesh_file(resumed, f));
  }
  fs::remove(resumed / "report.json");
  PipelineConfig cfg = small_config(resumed);
  cfg.resume = true;
  const auto summary = run_pipeline(scene_manifest(), cfg);
  CHECK(summary.frames_skipped == 1);
  CHECK(summary.frames_processed == kFrames - 1);
  CHECK(outputs(resumed) == outputs(ref));
}

TEST_CASE("disabling deformation leaves the rigidly posed template") {
  const fs::path out = testing::scratch_dir("pipeline_rigid");
  PipelineConfig cfg = small_config(out);
  cfg.run_deform = false;
  cfg.run_hand = false;
  cfg.hand_input = reference_run();
  run_pipeline(scene_manifest(), cfg);
  const TriMesh tmpl = load_mesh(scene_manifest().parent_path() / "object_template.obj");
  for (int f = 0; f < kFrames; ++f) {
    const FramePose p = load_pose(pose_file(out, f));
    REQUIRE(p.object);
    const TriMesh expected = apply_pose(tmpl, p.object->alpha);
    const TriMesh got = load_mesh(object_mesh_file(out, f));
    for (std::size_t v = 0; v < got.vertices.size(); ++v) CHECK((got.vertices[v] - expected.vertices[v]).norm() < 1e-6);
    for (double d : load_contact_map(contact_map_file(out, f))) CHECK(d < 1e-6);
    // Hand poses come from the input directory unchanged.
    CHECK(read_file(pose_file(out, f)).find("\"hand\"") != std::string::npos);
    CHECK(load_pose(pose_file(reference_run(), f)).hand->translation == p.hand->translation);
  }
}

TEST_CASE("a missing mask fails the object stage of that frame") {
  const fs::path scene = testing::scratch_dir("pipeline_missing");
  fs::copy(scene_manifest().parent_path(), scene, fs::copy_options::recursive);
  fs::remove(scene / "masks" / "mask_1_2.pgm");
  const fs::path out = testing::scratch_dir("pipeline_missing_out");
  try {
    run_pipeline(scene / "manifest.json", small_config(out));
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("frame 1, stage object-pose") != std::string::npos);
    CHECK(msg.find("mask_1_2.pgm") != std::string::npos);
  }
  CHECK(fs::exists(pose_file(out, 0)));
  CHECK_FALSE(fs::exists(pose_file(out, 1)));
}

TEST_CASE("config JSON is applied strictly") {
  PipelineConfig cfg;
  apply_config_json(cfg, R"({"object_pose": {"population": 40, "init": "normal"},
                             "deform": {"lambdas": [1, 2, 3, 4, 5]}, "stages": {"eval": false}})");
  CHECK(cfg.ga.population_size == 40);
  CHECK(cfg.ga.init == InitDistribution::Normal);
  CHECK(cfg.deform.lambdas == std::array<double, kTermCount>{1, 2, 3, 4, 5});
  CHECK_FALSE(cfg.run_eval);
  CHECK(cfg.ga.iterations == 20);

  PipelineConfig copy;
  apply_config_json(copy, config_to_json(cfg));
  CHECK(config_to_json(copy) == config_to_json(cfg));

  CHECK_THROWS_AS(apply_config_json(cfg, R"({"objectpose": {}})"), InputError);
  CHECK_THROWS_AS(apply_config_json(cfg, R"({"deform": {"spacing": 3}})"), InputError);
  CHECK_THROWS_AS(apply_config_json(cfg, R"({"object_pose": {"population": "many"}})"), InputError);
  CHECK_THROWS_AS(apply_config_json(cfg, "{not json"), InputError);
  PipelineConfig bad;
  apply_config_json(bad, R"({"voxel_mm": -1})");
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("missing sequence files are input errors") {
  CHECK_THROWS_AS(load_sequence(testing::scratch_dir("pipeline_nothing") / "manifest.json"), InputError);
  const fs::path scene = testing::scratch_dir("pipeline_nocams");
  fs::copy(scene_manifest().parent_path(), scene, fs::copy_options::recursive);
  fs::remove(scene / "cameras.json");
  CHECK_THROWS_AS(load_sequence(scene / "manifest.json"), InputError);
}
