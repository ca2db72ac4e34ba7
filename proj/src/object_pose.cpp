#include "deformcap/object_pose.h"

#include "deformcap/errors.h"
#include "deformcap/log.h"
#include "deformcap/rasterizer.h"
#include "deformcap/rotation.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>

namespace deformcap {

TriMesh apply_pose(const TriMesh& tmpl, const Vector6d& alpha) {
  return transformed(tmpl, axis_angle_to_matrix(alpha.head<3>()), alpha.tail<3>());
}

InitDistribution parse_init_distribution(const std::string& name) {
  if (name == "uniform") return InitDistribution::Uniform;
  if (name == "normal") return InitDistribution::Normal;
  throw InputError("unknown init distribution '" + name + "' (expected uniform or normal)");
}

const char* init_distribution_name(InitDistribution init) {
  return init == InitDistribution::Uniform ? "uniform" : "normal";
}

void GAConfig::validate() const {
  if (population_size < 2) throw InputError("GA config: population_size must be >= 2");
  if (iterations < 1 || tracking_iterations < 1) throw InputError("GA config: iterations must be >= 1");
  if (!(rotation_half_width > 0.0) || !(translation_half_width > 0.0) ||
      !(tracking_rotation_half_width > 0.0) || !(tracking_translation_half_width > 0.0)) {
    throw InputError("GA config: mutation half-widths must be > 0");
  }
  if (!(decay > 0.0 && decay <= 1.0)) throw InputError("GA config: decay must be in (0, 1]");
  if (!(lambda_o >= 0.0)) throw InputError("GA config: lambda_o must be >= 0");
  if (working_downscale < 1) throw InputError("GA config: working_downscale must be >= 1");
  if (!(smoothing_alpha > 0.0 && smoothing_alpha <= 1.0)) {
    throw InputError("GA config: smoothing alpha must be in (0, 1]");
  }
}

// ---------------------------------------------------------------------------
// Reference loss

std::vector<double> sample_view_terms(const Vector6d& alpha, const TriMesh& tmpl, const TriMesh* hand,
                                      std::span<const MaskImage> masks,
                                      std::span<const CameraParams> cams) {
  const TriMesh posed = apply_pose(tmpl, alpha);
  std::vector<LabeledMesh> scene;
  if (hand != nullptr) scene.push_back({hand, PixelLabel::Hand});
  scene.push_back({&posed, PixelLabel::Object});
  std::vector<double> terms;
  for (const MaskImage& mask : masks) {
    const CameraParams& cam = camera_by_id(cams, mask.view);
    const MaskImage visible = object_visible_mask(rasterize(scene, cam), mask.view);
    const MaskOverlap o = mask_overlap(visible, mask);
    terms.push_back(o.union_ == 0 ? 1.0 : 1.0 - double(o.intersection) / double(o.union_));
  }
  return terms;
}

double sample_loss(const Vector6d& alpha, const TriMesh& tmpl, const TriMesh* hand,
                   std::span<const MaskImage> masks, std::span<const CameraParams> cams,
                   double lambda_o) {
  double loss = 0.0;
  for (double t : sample_view_terms(alpha, tmpl, hand, masks, cams)) loss += t;
  return loss + lambda_o * alpha.norm();
}

// ---------------------------------------------------------------------------
// Search region

Vector3d camera_convergence_point(std::span<const CameraParams> cams) {
  Matrix3d a = Matrix3d::Zero();
  Vector3d b = Vector3d::Zero();
  for (const auto& cam : cams) {
    const Vector3d d = cam.R.row(2).transpose().normalized();
    const Matrix3d p = Matrix3d::Identity() - d * d.transpose();
    a += p;
    b += p * cam.center();
  }
  if (cams.empty() || std::abs(a.determinant()) < 1e-9) {
    return Vector3d::Zero();
  }
  return a.ldlt().solve(b);
}

Aabb default_search_region(const TriMesh* hand, std::span<const CameraParams> cams, double margin) {
  Aabb box;
  if (hand != nullptr && !hand->vertices.empty()) box = bounding_box(*hand);
  box.extend(camera_convergence_point(cams));
  box.min.array() -= margin;
  box.max.array() += margin;
  return box;
}

// ---------------------------------------------------------------------------
// Working-resolution evaluator

LossEvaluator::LossEvaluator(const FrameInputs& inputs, int downscale, double lambda_o)
    : tmpl_(inputs.object_template), lambda_o_(lambda_o) {
  if (tmpl_ == nullptr) throw InputError("object pose: missing object template");
  std::vector<Vector3d> screen;
  for (const MaskImage& full : inputs.masks) {
    const CameraParams& cam = camera_by_id(inputs.cams, full.view);
    if (full.width != cam.width || full.height != cam.height) {
      throw InputError("mask of view " + std::to_string(full.view) + " is " + std::to_string(full.width) +
                       "x" + std::to_string(full.height) + ", camera expects " +
                       std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
    View view;
    view.mask = downsample_mask(full, downscale);
    view.cam = cam.scaled(1.0 / downscale);
    view.cam.width = view.mask.width;
    view.cam.height = view.mask.height;
    view.mask_count = view.mask.foreground_count();
    view.hand_depth.assign(std::size_t(view.cam.width) * view.cam.height,
                           std::numeric_limits<double>::infinity());
    if (inputs.hand != nullptr) {
      const int w = view.cam.width;
      scan_mesh(*inputs.hand, view.cam, screen, [&](int x, int y, double z, std::size_t) {
        double& d = view.hand_depth[std::size_t(y) * w + x];
        d = std::min(d, z);
      });
    }
    views_.push_back(std::move(view));
  }
}

double LossEvaluator::evaluate_one(const Vector6d& alpha, Scratch& scratch) const {
  const Matrix3d r = axis_angle_to_matrix(alpha.head<3>());
  const Vector3d t = alpha.tail<3>();
  TriMesh posed;
  posed.faces = tmpl_->faces;
  posed.vertices.resize(tmpl_->vertices.size());
  for (std::size_t i = 0; i < posed.vertices.size(); ++i) {
    posed.vertices[i] = r * tmpl_->vertices[i] + t;
  }
  double loss = 0.0;
  for (const View& view : views_) {
    const std::size_t n = view.hand_depth.size();
    if (scratch.stamp.size() < n) scratch.stamp.assign(n, 0);
    if (++scratch.counter == 0) {
      std::fill(scratch.stamp.begin(), scratch.stamp.end(), 0);
      scratch.counter = 1;
    }
    const std::uint32_t id = scratch.counter;
    std::size_t visible = 0;
    std::size_t inter = 0;
    const int w = view.cam.width;
    // Visible iff some object fragment lies strictly in front of the hand.
    scan_mesh(posed, view.cam, scratch.screen, [&](int x, int y, double z, std::size_t) {
      const std::size_t idx = std::size_t(y) * w + x;
      if (scratch.stamp[idx] == id || !(z < view.hand_depth[idx])) return;
      scratch.stamp[idx] = id;
      ++visible;
      if (view.mask.pixels[idx] != 0) ++inter;
    }, true);
    const std::size_t uni = visible + view.mask_count - inter;
    loss += uni == 0 ? 1.0 : 1.0 - double(inter) / double(uni);
  }
  return loss + lambda_o_ * alpha.norm();
}

double LossEvaluator::operator()(const Vector6d& alpha) const {
  Scratch scratch;
  return evaluate_one(alpha, scratch);
}

void LossEvaluator::evaluate(std::vector<PoseSample>& samples, int threads) const {
  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::clamp(n_threads, 1, std::max<int>(1, static_cast<int>(samples.size())));
  auto work = [&](std::size_t begin, std::size_t end) {
    Scratch scratch;
    for (std::size_t i = begin; i < end; ++i) {
      samples[i].loss = evaluate_one(samples[i].alpha, scratch);
    }
  };
  if (n_threads == 1) {
    work(0, samples.size());
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (samples.size() + n_threads - 1) / n_threads;
  for (int k = 0; k < n_threads; ++k) {
    const std::size_t begin = std::min(samples.size(), k * chunk);
    const std::size_t end = std::min(samples.size(), begin + chunk);
    if (begin < end) pool.emplace_back(work, begin, end);
  }
  for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Genetic operators

std::mt19937_64 sample_rng(std::uint64_t seed, int generation, int index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(generation), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

std::vector<PoseSample> roulette_select(std::span<const PoseSample> population, int count,
                                        std::mt19937_64& rng) {
  std::vector<PoseSample> out;
  if (count <= 0 || population.empty()) return out;
  double lmax = -std::numeric_limits<double>::infinity();
  double lmin = std::numeric_limits<double>::infinity();
  for (const auto& s : population) {
    lmax = std::max(lmax, s.loss);
    lmin = std::min(lmin, s.loss);
  }
  const double eps = 1e-6 * (lmax - lmin + 1.0);
  std::vector<double> cumulative(population.size());
  double total = 0.0;
  for (std::size_t i = 0; i < population.size(); ++i) {
    total += (lmax - population[i].loss) + eps;
    cumulative[i] = total;
  }
  std::uniform_real_distribution<double> u(0.0, total);
  out.reserve(count);
  for (int k = 0; k < count; ++k) {
    const double r = u(rng);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), r);
    if (it == cumulative.end()) --it;
    out.push_back(population[it - cumulative.begin()]);
  }
  return out;
}

PoseSample mutate(const PoseSample& parent, double rotation_half_width, double translation_half_width,
                  std::mt19937_64& rng) {
  PoseSample child = parent;
  child.loss = std::numeric_limits<double>::infinity();
  if (rotation_half_width > 0.0) {
    std::uniform_real_distribution<double> ur(-rotation_half_width, rotation_half_width);
    for (int i = 0; i < 3; ++i) child.alpha[i] += ur(rng);
  }
  if (translation_half_width > 0.0) {
    std::uniform_real_distribution<double> ut(-translation_half_width, translation_half_width);
    for (int i = 3; i < 6; ++i) child.alpha[i] += ut(rng);
  }
  child.alpha.head<3>() = canonicalize_axis_angle(child.alpha.head<3>());
  return child;
}

PoseSample smooth_object_pose(const PoseSample& previous, const PoseSample& current, double alpha) {
  PoseSample out = current;
  const Vector3d prev_rot = nearest_axis_angle(previous.rotation(), current.rotation());
  out.alpha.head<3>() = canonicalize_axis_angle(alpha * current.rotation() + (1.0 - alpha) * prev_rot);
  out.alpha.tail<3>() = alpha * current.translation() + (1.0 - alpha) * previous.translation();
  return out;
}

namespace {

PoseSample initial_sample(const Aabb& region, InitDistribution init, std::mt19937_64& rng) {
  constexpr double pi = std::numbers::pi;
  PoseSample s;
  if (init == InitDistribution::Uniform) {
    std::uniform_real_distribution<double> u(-pi, pi);
    Vector3d r;
    do {
      r = Vector3d(u(rng), u(rng), u(rng));
    } while (r.norm() > pi);
    s.alpha.head<3>() = r;
    for (int i = 0; i < 3; ++i) {
      std::uniform_real_distribution<double> ut(region.min[i], region.max[i]);
      s.alpha[3 + i] = ut(rng);
    }
  } else {
    std::normal_distribution<double> nr(0.0, pi / 3.0);
    s.alpha.head<3>() = canonicalize_axis_angle(Vector3d(nr(rng), nr(rng), nr(rng)));
    const Vector3d center = region.center();
    const Vector3d half = 0.5 * region.extent();
    for (int i = 0; i < 3; ++i) {
      std::normal_distribution<double> nt(center[i], half[i] / 3.0);
      s.alpha[3 + i] = nt(rng);
    }
  }
  return s;
}

const PoseSample& best_of(std::span<const PoseSample> samples) {
  return *std::min_element(samples.begin(), samples.end(),
                           [](const PoseSample& a, const PoseSample& b) { return a.loss < b.loss; });
}

} // namespace

PoseEstimate estimate_pose(const FrameInputs& inputs, const std::optional<PoseSample>& previous,
                           const GAConfig& cfg) {
  cfg.validate();
  const LossEvaluator evaluator(inputs, cfg.working_downscale, cfg.lambda_o);
  const int n = cfg.population_size;
  PoseEstimate out;
  std::vector<PoseSample> population(n);

  double rot_h = cfg.rotation_half_width;
  double trans_h = cfg.translation_half_width;
  int generations = cfg.iterations;
  if (!previous) {
    const Aabb region = inputs.search ? *inputs.search
                                      : default_search_region(inputs.hand, inputs.cams, cfg.search_margin);
    for (int i = 0; i < n; ++i) {
      auto rng = sample_rng(cfg.seed, 0, i);
      population[i] = initial_sample(region, cfg.init, rng);
    }
  } else {
    // Reseed around the previous solution; the first slot keeps it as is.
    population[0] = *previous;
    for (int i = 1; i < n; ++i) {
      auto rng = sample_rng(cfg.seed, 0, i);
      population[i] = mutate(*previous, cfg.tracking_rotation_half_width,
                             cfg.tracking_translation_half_width, rng);
    }
    rot_h = cfg.tracking_rotation_half_width;
    trans_h = cfg.tracking_translation_half_width;
    generations = cfg.tracking_iterations - 1;
  }
  evaluator.evaluate(population, cfg.threads);
  out.evaluations += n;
  PoseSample best = best_of(population);
  out.best_trace.push_back(best.loss);

  for (int gen = 1; gen <= generations; ++gen) {
    auto select_rng = sample_rng(cfg.seed, gen, -1);
    const auto parents = roulette_select(population, n - 1, select_rng);
    std::vector<PoseSample> next(n);
    next[0] = best;  // elitism
    for (int i = 1; i < n; ++i) {
      auto rng = sample_rng(cfg.seed, gen, i);
      next[i] = mutate(parents[i - 1], rot_h, trans_h, rng);
    }
    std::vector<PoseSample> children(next.begin() + 1, next.end());
    evaluator.evaluate(children, cfg.threads);
    out.evaluations += n - 1;
    std::copy(children.begin(), children.end(), next.begin() + 1);
    population = std::move(next);
    const PoseSample& gen_best = best_of(population);
    if (gen_best.loss < best.loss) best = gen_best;
    out.best_trace.push_back(best.loss);
    log_debug("object pose generation ", gen, ": best loss ", best.loss);
    rot_h *= cfg.decay;
    trans_h *= cfg.decay;
  }

  out.best = best;
  if (previous && cfg.smoothing_alpha < 1.0) {
    out.pose = smooth_object_pose(*previous, best, cfg.smoothing_alpha);
    out.pose.loss = evaluator(out.pose.alpha);
  } else {
    out.pose = best;
  }
  return out;
}

} // namespace deformcap
