#pragma once

#include "divcon/field.hpp"
#include "divcon/metrics.hpp"
#include "divcon/objective.hpp"
#include "divcon/scenes.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <string>
#include <vector>

namespace divcon {

struct TrainConfig {
  int iterations = 5000;
  int batch_rays = 64;
  double learning_rate = 5e-4;
  /// The rate decays exponentially to learning_rate * lr_final_factor.
  double lr_final_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;
  int samples = 64;
  bool jitter = false;
  int augment_multiplier = 1;
  SphereSampling sphere_sampling = SphereSampling::AngleUniform;
  int threads = 1;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  int eval_every = 0;        // 0 disables periodic held-out evaluation
  int log_every = 1;
  MaskConfig mask{};
  LossConfig loss{};
  FieldArchitecture arch{};

  // Where the training data comes from: a dataset directory, or a preset
  // rendered on the fly.
  std::string dataset_dir;
  std::string preset = "three-spheres";
  int width = 64;
  int height = 64;
  int n_train = 4;
  int n_heldout = 4;
  std::uint64_t scene_seed = 0;

  void validate() const {
    if (batch_rays < 1) fail(ErrorCode::BadConfig, "batch_rays must be at least 1");
    if (!(learning_rate > 0.0)) fail(ErrorCode::BadConfig, "learning rate must be positive");
    if (!(lr_final_factor > 0.0)) fail(ErrorCode::BadConfig, "lr_final_factor must be positive");
    if (iterations < 0) fail(ErrorCode::BadConfig, "iterations must be non-negative");
    if (samples < 2) fail(ErrorCode::BadConfig, "need at least two samples per ray");
    if (augment_multiplier < 1) fail(ErrorCode::BadConfig, "augment_multiplier must be at least 1");
    if (threads < 1) fail(ErrorCode::BadConfig, "threads must be at least 1");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && adam_epsilon > 0.0))
      fail(ErrorCode::BadConfig, "invalid optimizer moments");
    if (mask.epsilon < 0) fail(ErrorCode::BadConfig, "mask epsilon must be non-negative");
    try {
      loss.validate();
    } catch (const Error& e) {
      fail(ErrorCode::BadConfig, e.what());
    }
  }

  double learning_rate_at(long iteration) const {
    if (iterations <= 0) return learning_rate;
    return learning_rate * std::pow(lr_final_factor, static_cast<double>(iteration) / iterations);
  }

  ObjectiveConfig objective(const Vec3& background) const {
    ObjectiveConfig o;
    o.samples = samples;
    o.jitter = jitter;
    o.seed = seed;
    o.mask = mask;
    o.loss = loss;
    o.background = background;
    o.augment_multiplier = augment_multiplier;
    return o;
  }
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long steps = 0;
};

inline void adam_update(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, double lr,
                        double beta1, double beta2, double eps) {
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
  }
  ++state.steps;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

struct StepRecord {
  long iteration = 0;
  LossBreakdown loss;
  double learning_rate = 0.0;
  double grad_norm = 0.0;
  bool augmented = false;
};

/// Uniform draws over all training pixels, keyed by (seed, iteration, slot).
inline RayBatch sample_ray_batch(const DatasetBundle& data, const TrainConfig& cfg, long iteration) {
  const std::vector<std::size_t> train = data.indices(Split::Train);
  if (train.empty()) fail(ErrorCode::InvalidArgument, "dataset has no training views");
  std::vector<std::uint64_t> start(train.size() + 1, 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const Image& img = data.images[train[i]];
    start[i + 1] = start[i] + static_cast<std::uint64_t>(img.width) * img.height;
  }
  RayBatch b;
  const int mult = cfg.augment_multiplier;
  for (int k = 0; k < cfg.batch_rays; ++k) {
    CounterRng rng(cfg.seed, Stream::RaySelect, static_cast<std::uint64_t>(iteration), static_cast<std::uint64_t>(k));
    const std::uint64_t g = rng.below(start.back());
    const auto view = static_cast<std::size_t>(std::upper_bound(start.begin(), start.end(), g) - start.begin() - 1);
    const std::uint64_t local = g - start[view];
    const Image& img = data.images[train[view]];
    const int px = static_cast<int>(local % img.width), py = static_cast<int>(local / img.width);
    b.rays.push_back(data.cameras[train[view]].pixel_ray(px, py, data.t_near, data.t_far));
    b.targets.push_back(img.rgb(px, py));
    b.ray_ids.push_back(g);
    for (int j = 0; j < mult; ++j)
      b.draws.push_back(sphere_draw_for(cfg.seed, static_cast<std::uint64_t>(iteration),
                                        static_cast<std::uint64_t>(k) * mult + j, cfg.sphere_sampling));
  }
  return b;
}

/// Loss and gradient for one iteration's batch. With threads > 1 the batch is
/// split into contiguous chunks whose results are merged in chunk order, so
/// the outcome does not depend on scheduling.
inline ObjectiveResult batch_objective(const FieldModel& model, const ObjectiveConfig& ocfg, const RayBatch& batch,
                                       long iteration, int threads, const ObjectiveOptions& opt = {}) {
  const std::size_t n = batch.rays.size();
  const auto chunks = static_cast<std::size_t>(std::clamp<std::size_t>(static_cast<std::size_t>(threads), 1, n));
  if (chunks <= 1) return evaluate_objective(model, ocfg, batch, iteration, opt);

  const std::size_t mult = static_cast<std::size_t>(std::max(1, ocfg.augment_multiplier));
  std::vector<RayBatch> parts(chunks);
  std::vector<std::vector<std::vector<double>>> refs(chunks);
  std::vector<ObjectiveOptions> opts(chunks, opt);
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t lo = c * n / chunks, hi = (c + 1) * n / chunks;
    if (opt.rc_reference) {
      refs[c].assign(opt.rc_reference->begin() + lo, opt.rc_reference->begin() + hi);
      opts[c].rc_reference = &refs[c];
    }
    RayBatch& p = parts[c];
    p.rays.assign(batch.rays.begin() + lo, batch.rays.begin() + hi);
    p.targets.assign(batch.targets.begin() + lo, batch.targets.begin() + hi);
    if (!batch.ray_ids.empty()) p.ray_ids.assign(batch.ray_ids.begin() + lo, batch.ray_ids.begin() + hi);
    if (!batch.draws.empty()) p.draws.assign(batch.draws.begin() + lo * mult, batch.draws.begin() + hi * mult);
  }
  std::vector<std::future<ObjectiveResult>> futures;
  for (std::size_t c = 0; c < chunks; ++c)
    futures.push_back(std::async(std::launch::async, [&, c] {
      return evaluate_objective(model, ocfg, parts[c], iteration, opts[c], static_cast<double>(n));
    }));
  ObjectiveResult total;
  std::size_t augmented = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    ObjectiveResult r = futures[c].get();
    if (c == 0) {
      total = std::move(r);
      augmented = total.loss.augmented_rays;
      continue;
    }
    const std::size_t lo = c * n / chunks;
    total.loss.mse += r.loss.mse;
    total.loss.rc += r.loss.rc;
    total.loss.pbf += r.loss.pbf;
    total.loss.mnll += r.loss.mnll;
    total.loss.nll += r.loss.nll;
    total.loss.ue += r.loss.ue;
    total.loss.total += r.loss.total;
    total.loss.augmented_rays += r.loss.augmented_rays;
    augmented += r.loss.augmented_rays;
    total.accepted += r.accepted;
    for (auto& w : r.original_weights) total.original_weights.push_back(std::move(w));
    if (opt.want_gradient) {
      total.gradient += r.gradient;
      total.original_gradient += r.original_gradient;
      total.surface_gradient += r.surface_gradient;
      total.inner_gradient += r.inner_gradient;
    }
    for (std::size_t p = 0; p < r.pairs.size(); ++p) {
      total.pairs.push_back(std::move(r.pairs[p]));
      total.pair_owner.push_back(r.pair_owner[p] + lo);
    }
  }
  total.loss.masked_fraction = augmented ? static_cast<double>(total.accepted) / augmented : 0.0;
  return total;
}

/// One optimization step: sample rays, render, augment, mask, evaluate the
/// loss, and apply one Adam update.
inline StepRecord train_step(FieldModel& model, AdamState& adam, const DatasetBundle& data, const TrainConfig& cfg,
                             long iteration) {
  if (iteration < 0 || iteration >= cfg.iterations)
    fail(ErrorCode::InvalidArgument, "iteration outside the configured run");
  const RayBatch batch = sample_ray_batch(data, cfg, iteration);
  const ObjectiveConfig ocfg = cfg.objective(background_color(data.background));
  const ObjectiveResult r = batch_objective(model, ocfg, batch, iteration, cfg.threads);
  if (!std::isfinite(r.loss.total) || !all_finite(r.gradient))
    fail(ErrorCode::NonFiniteGradient, "non-finite loss or gradient at iteration " + std::to_string(iteration));
  StepRecord rec;
  rec.iteration = iteration;
  rec.loss = r.loss;
  rec.learning_rate = cfg.learning_rate_at(iteration);
  rec.grad_norm = r.gradient.norm();
  rec.augmented = r.loss.augmented_rays > 0;
  adam_update(model.parameters(), r.gradient, adam, rec.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  if (!all_finite(model.parameters()))
    fail(ErrorCode::NonFiniteGradient, "parameters became non-finite at iteration " + std::to_string(iteration));
  return rec;
}

inline RenderOptions render_options_for(const DatasetBundle& data, const TrainConfig& cfg) {
  RenderOptions opt;
  opt.samples = cfg.samples;
  opt.t_near = data.t_near;
  opt.t_far = data.t_far;
  opt.background = background_color(data.background);
  return opt;
}

inline MetricsReport evaluate_heldout(const FieldModel& model, const DatasetBundle& data, const TrainConfig& cfg,
                                      std::vector<Image>* renders = nullptr) {
  std::vector<std::size_t> idx = data.indices(Split::Heldout);
  if (idx.empty()) fail(ErrorCode::InvalidArgument, "dataset has no held-out views");
  const RenderOptions opt = render_options_for(data, cfg);
  std::vector<Image> pred, gt;
  std::vector<std::string> names;
  for (std::size_t i : idx) {
    pred.push_back(render_image(model, data.cameras[i], opt).rgb);
    gt.push_back(data.images[i]);
    names.push_back("view_" + std::to_string(i));
  }
  MetricsReport report = evaluate_images(pred, gt, names);
  if (renders) *renders = std::move(pred);
  return report;
}

/// Hooks the caller can use to persist progress; all are optional.
struct TrainCallbacks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(long iteration, const FieldModel&)> on_checkpoint;
  std::function<void(long iteration, const FieldModel&)> on_eval;
};

struct TrainResult {
  FieldModel model;
  std::vector<StepRecord> history;
  double seconds = 0.0;
};

inline TrainResult run_training(const TrainConfig& cfg, const DatasetBundle& data, const TrainCallbacks& cb = {}) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult res{FieldModel::initialized(cfg.arch, cfg.seed), {}, 0.0};
  AdamState adam;
  res.history.reserve(static_cast<std::size_t>(cfg.iterations));
  for (long it = 0; it < cfg.iterations; ++it) {
    res.history.push_back(train_step(res.model, adam, data, cfg, it));
    const long done = it + 1;
    if (cb.on_step && (cfg.log_every <= 1 || it % cfg.log_every == 0 || done == cfg.iterations))
      cb.on_step(res.history.back());
    if (cb.on_checkpoint && cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0)
      cb.on_checkpoint(done, res.model);
    if (cb.on_eval && cfg.eval_every > 0 && done % cfg.eval_every == 0) cb.on_eval(done, res.model);
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Mean masked fraction over iterations where augmentation ran.
inline double mean_masked_fraction(const std::vector<StepRecord>& history) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const StepRecord& r : history)
    if (r.augmented) {
      sum += r.loss.masked_fraction;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// ---------------------------------------------------------------------------
// Ablation arms
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& ablation_arm_names() {
  static const std::vector<std::string> names{"base", "rc", "rc+pbf", "full", "bf"};
  return names;
}

/// Loss settings for an arm. Base keeps NLL and emptiness and drops the
/// three augmentation terms; "bf" swaps matched feature pairs for unmatched
/// ones.
inline LossConfig arm_loss(const std::string& arm, LossConfig base) {
  if (arm == "full") return base;
  if (arm == "base") {
    base.lambda_rc = base.lambda_pbf = base.lambda_mnll = 0.0;
  } else if (arm == "rc") {
    base.lambda_pbf = base.lambda_mnll = 0.0;
  } else if (arm == "rc+pbf") {
    base.lambda_mnll = 0.0;
  } else if (arm == "bf") {
    base.pairing = FeaturePairing::Reversed;
  } else {
    fail(ErrorCode::BadConfig, "unknown ablation arm '" + arm + "'");
  }
  return base;
}

struct AblationRow {
  std::string arm;
  MetricsReport heldout;
  double masked_fraction = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;
};

inline std::vector<AblationRow> ablation_run(const DatasetBundle& data, const TrainConfig& base_cfg,
                                             const std::vector<std::string>& arms,
                                             const std::function<void(const AblationRow&)>& on_row = {}) {
  if (arms.empty()) fail(ErrorCode::InvalidArgument, "no ablation arms given");
  std::vector<AblationRow> rows;
  for (const std::string& arm : arms) {
    TrainConfig cfg = base_cfg;
    cfg.loss = arm_loss(arm, base_cfg.loss);
    const TrainResult res = run_training(cfg, data);
    AblationRow row;
    row.arm = arm;
    row.heldout = evaluate_heldout(res.model, data, cfg);
    row.masked_fraction = mean_masked_fraction(res.history);
    row.final_loss = res.history.empty() ? 0.0 : res.history.back().loss.total;
    row.seconds = res.seconds;
    if (on_row) on_row(row);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace divcon
