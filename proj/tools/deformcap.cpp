#include "deformcap/errors.h"
#include "deformcap/log.h"
#include "deformcap/metrics.h"
#include "deformcap/pipeline.h"
#include "deformcap/synthgen.h"

#include <CLI11.hpp>

#include <iostream>
#include <sstream>

using namespace deformcap;

namespace {

std::array<double, kTermCount> parse_lambdas(const std::string& text) {
  std::array<double, kTermCount> out{};
  std::stringstream ss(text);
  std::string item;
  int i = 0;
  while (std::getline(ss, item, ',')) {
    if (i >= kTermCount) throw InputError("--lambdas takes 5 comma-separated values");
    try {
      out[i++] = std::stod(item);
    } catch (const std::exception&) {
      throw InputError("--lambdas: bad value '" + item + "'");
    }
  }
  if (i != kTermCount) throw InputError("--lambdas takes 5 comma-separated values");
  return out;
}

void print_report(const EvalReport& report) {
  const auto agg = report.aggregate();
  auto show = [](const char* name, const std::optional<double>& v, const char* unit) {
    if (v) std::cout << name << ": " << *v << unit << '\n';
  };
  show("joint error", agg.joint_error_mean, " mm");
  show("mIoU", agg.miou, " %");
  show("intersection volume", agg.intersection_cm3, " cm3");
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"deformcap: multi-view hand and deformable object reconstruction"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "debug, info, warn, error or off");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic sequence");
  std::string scenario = "press";
  SynthOptions synth_opt;
  std::string synth_out;
  synth->add_option("--scenario", scenario)->check(CLI::IsMember({"press", "orbit", "table1"}));
  synth->add_option("--frames", synth_opt.frames);
  synth->add_option("--views", synth_opt.views);
  synth->add_option("--seed", synth_opt.seed);
  synth->add_option("--noise", synth_opt.keypoint_noise_px, "Keypoint noise (px)");
  synth->add_option("--out", synth_out)->required();

  // Shared stage options.
  PipelineConfig cfg;
  std::string manifest;
  std::string out_dir;
  std::string config_path;
  std::string hand_dir;
  std::string objpose_dir;
  std::string meshes_dir;
  std::string lambdas;
  std::string init;
  std::string dump_render;
  std::optional<std::uint64_t> seed;

  auto* hand = app.add_subcommand("hand-track", "Triangulate keypoints and fit hand poses");
  hand->add_option("--manifest", manifest)->required();
  hand->add_option("--out", out_dir)->required();
  hand->add_option("--conf-thresh", cfg.hand.conf_threshold);
  hand->add_option("--smooth-alpha", cfg.hand_smoothing_alpha);

  auto* object = app.add_subcommand("object-pose", "Estimate rigid object poses");
  object->add_option("--manifest", manifest)->required();
  object->add_option("--hand", hand_dir)->required();
  object->add_option("--out", out_dir)->required();
  object->add_option("--pop", cfg.ga.population_size);
  object->add_option("--iters", cfg.ga.iterations);
  object->add_option("--seed", seed);
  object->add_option("--init", init)->check(CLI::IsMember({"uniform", "normal"}));

  auto* deform = app.add_subcommand("deform", "Deform posed object templates");
  deform->add_option("--manifest", manifest)->required();
  deform->add_option("--objpose", objpose_dir)->required();
  deform->add_option("--hand", hand_dir)->required();
  deform->add_option("--out", out_dir)->required();
  deform->add_option("--lambdas", lambdas, "cont,silh,temp,rigid,reg");
  deform->add_option("--node-spacing", cfg.deform.node_spacing);

  auto* contact = app.add_subcommand("contact-map", "Per-vertex displacement maps");
  contact->add_option("--manifest", manifest)->required();
  contact->add_option("--objpose", objpose_dir)->required();
  contact->add_option("--hand", hand_dir);
  contact->add_option("--meshes", meshes_dir)->required();
  contact->add_option("--out", out_dir)->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a run against reference data");
  std::string pred;
  std::string gt;
  std::string report_path;
  eval->add_option("--pred", pred, "Run output directory")->required();
  eval->add_option("--gt", gt, "Manifest with masks and ground truth")->required();
  eval->add_option("--report", report_path, "report.json or report.csv")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run all stages");
  pipeline->add_option("--manifest", manifest)->required();
  pipeline->add_option("--config", config_path);
  pipeline->add_option("--out", out_dir)->required();
  pipeline->add_flag("--resume", cfg.resume);
  pipeline->add_option("--seed", seed);

  for (auto* sub : {hand, object, deform, contact, pipeline}) {
    sub->add_option("--dump-render", dump_render, "Write label-plane PGMs here");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 3;
  }

  try {
    if (!log_level.empty()) cfg.log_level = log_level;
    set_log_level(parse_log_level(cfg.log_level));

    if (synth->parsed()) {
      const fs::path out(synth_out);
      if (scenario == "table1") {
        synth_opt.keypoint_noise_px = synth_opt.keypoint_noise_px > 0.0 ? synth_opt.keypoint_noise_px : 2.0;
        save_table1_fixture(out / "table1_points.json",
                            make_table1_fixture(synth_opt.seed, synth_opt.keypoint_noise_px));
        std::cout << write_scene(make_press_sequence(synth_opt), out).string() << '\n';
      } else if (scenario == "orbit") {
        std::cout << write_scene(make_orbit_sequence(synth_opt), out).string() << '\n';
      } else {
        std::cout << write_scene(make_press_sequence(synth_opt), out).string() << '\n';
      }
      return 0;
    }

    if (eval->parsed()) {
      const SequenceData seq = load_sequence(gt);
      const EvalReport report = evaluate_run(seq, pred);
      const bool csv = fs::path(report_path).extension() == ".csv";
      write_file(report_path, csv ? report_to_csv(report) : report_to_json(report));
      print_report(report);
      return 0;
    }

    if (pipeline->parsed() && !config_path.empty()) {
      apply_config_json(cfg, read_file(config_path));
      if (!log_level.empty()) cfg.log_level = log_level;
    }
    cfg.out_dir = out_dir;
    if (seed) cfg.ga.seed = *seed;
    if (!init.empty()) cfg.ga.init = parse_init_distribution(init);
    if (!lambdas.empty()) cfg.deform.lambdas = parse_lambdas(lambdas);
    if (!dump_render.empty()) cfg.dump_render = fs::path(dump_render);
    if (!hand_dir.empty()) cfg.hand_input = fs::path(hand_dir);
    if (!objpose_dir.empty()) cfg.object_input = fs::path(objpose_dir);
    if (!meshes_dir.empty()) cfg.mesh_input = fs::path(meshes_dir);

    if (hand->parsed()) {
      cfg.run_object = cfg.run_deform = cfg.run_contact_map = cfg.run_eval = false;
    } else if (object->parsed()) {
      cfg.run_hand = cfg.run_deform = cfg.run_contact_map = cfg.run_eval = false;
    } else if (deform->parsed()) {
      cfg.run_hand = cfg.run_object = cfg.run_contact_map = cfg.run_eval = false;
    } else if (contact->parsed()) {
      cfg.run_hand = cfg.run_object = cfg.run_deform = cfg.run_eval = false;
      if (!cfg.hand_input) cfg.hand_input = cfg.object_input;
    }
    if (cfg.dump_render) fs::create_directories(*cfg.dump_render);

    const PipelineSummary summary = run_pipeline(manifest, cfg);
    std::cerr << "processed " << summary.frames_processed << " frame(s), skipped " << summary.frames_skipped
              << '\n';
    if (cfg.run_eval) print_report(summary.report);
    return 0;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 3;
  } catch (const StageError& e) {
    std::cerr << "stage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
