#pragma once

#include "divcon/consistency.hpp"
#include "divcon/field.hpp"
#include "divcon/geometry.hpp"
#include "divcon/losses.hpp"
#include "divcon/renderer.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <vector>

namespace divcon {

/// A group of rays rendered through the learned field with one batched
/// forward pass; samples of ray k occupy columns [k * n, (k + 1) * n).
struct RenderedBatch {
  std::vector<Ray> rays;
  std::vector<BlendingProfile> profiles;
  FieldCache cache;
  int samples = 0;

  std::size_t size() const { return rays.size(); }
  Eigen::Index offset(std::size_t k) const { return static_cast<Eigen::Index>(k) * samples; }
  RayView view(std::size_t k) const {
    return RayView(profiles[k], cache.color.middleCols(offset(k), samples),
                   cache.bottleneck().middleCols(offset(k), samples));
  }
};

/// `jitter_keys`, when non-empty, supplies a per-ray generator key triple
/// (seed, iteration, ray id) for stratified sampling.
struct JitterKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t ray_id = 0;
};

inline RenderedBatch render_batch(const FieldModel& model, std::vector<Ray> rays, int samples,
                                  std::span<const JitterKey> jitter_keys = {}, const Vec3& background = Vec3::Zero()) {
  RenderedBatch b;
  b.rays = std::move(rays);
  b.samples = samples;
  const Eigen::Index total = static_cast<Eigen::Index>(b.rays.size()) * samples;
  Eigen::Matrix3Xd points(3, total), dirs(3, total);
  std::vector<SampleGrid> grids;
  grids.reserve(b.rays.size());
  for (std::size_t k = 0; k < b.rays.size(); ++k) {
    validate(b.rays[k]);
    if (!jitter_keys.empty()) {
      CounterRng rng(jitter_keys[k].seed, Stream::Jitter, jitter_keys[k].iteration, jitter_keys[k].ray_id);
      grids.push_back(coarse_sample(b.rays[k], samples, true, &rng));
    } else {
      grids.push_back(coarse_sample(b.rays[k], samples));
    }
    sample_points(b.rays[k], grids.back(), points, dirs, b.offset(k));
  }
  if (total == 0) return b;
  b.cache = model.forward(points, dirs);
  b.profiles.reserve(b.rays.size());
  for (std::size_t k = 0; k < b.rays.size(); ++k)
    b.profiles.push_back(volume_render(std::span<const double>(b.cache.sigma.data() + b.offset(k), samples),
                                       b.cache.color.middleCols(b.offset(k), samples), grids[k], background));
  return b;
}

/// Chains per-ray profile gradients through compositing and the field.
inline void backward_batch(const FieldModel& model, const RenderedBatch& b, std::span<const RayGradient> grads,
                           const Vec3& background, Eigen::VectorXd& param_grad) {
  if (grads.size() != b.size()) fail(ErrorCode::ShapeMismatch, "one gradient per rendered ray is required");
  if (b.size() == 0) return;
  const Eigen::Index total = b.cache.size();
  Eigen::VectorXd d_sigma = Eigen::VectorXd::Zero(total);
  Eigen::Matrix3Xd d_color = Eigen::Matrix3Xd::Zero(3, total);
  Eigen::MatrixXd d_feat;
  for (std::size_t k = 0; k < b.size(); ++k) {
    const RayGradient& g = grads[k];
    const Eigen::Index off = b.offset(k);
    const CompositeGradient cg = volume_render_backward(b.profiles[k], b.cache.color.middleCols(off, b.samples),
                                                        g.d_weights, g.d_color, background);
    d_sigma.segment(off, b.samples) = cg.d_sigma;
    d_color.middleCols(off, b.samples) = cg.d_color + g.d_sample_colors;
    if (g.d_features.size() != 0) {
      if (d_feat.size() == 0) d_feat = Eigen::MatrixXd::Zero(b.cache.bottleneck().rows(), total);
      d_feat.middleCols(off, b.samples) = g.d_features;
    }
  }
  model.backward(b.cache, d_sigma, d_color, d_feat, param_grad);
}

/// Settings that shape one evaluation of the training objective.
struct ObjectiveConfig {
  int samples = 64;
  bool jitter = false;
  std::uint64_t seed = 0;
  MaskConfig mask{};
  LossConfig loss{};
  Vec3 background = Vec3::Zero();
  int augment_multiplier = 1;
};

struct ObjectiveOptions {
  /// Replaces every computed mask (test hook for gating checks).
  std::optional<bool> mask_override;
  /// Build and render augmented rays even when their loss weights are zero.
  bool force_augmentation = false;
  bool want_gradient = true;
  /// Per-ray weights to use as the fixed side of the one-sided ray
  /// consistency term instead of the current original weights. Finite
  /// difference checks pass the unperturbed weights here, which is what
  /// detaching the original means.
  const std::vector<std::vector<double>>* rc_reference = nullptr;
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<Vec3> targets;
  /// augment_multiplier draws per ray, ray-major.
  std::vector<SphereDraw> draws;
  /// Global ids of the rays, used for jitter keys.
  std::vector<std::uint64_t> ray_ids;
};

struct ObjectiveResult {
  LossBreakdown loss;
  Eigen::VectorXd gradient;
  /// Parameter-gradient contributions routed through each ray family.
  Eigen::VectorXd original_gradient;
  Eigen::VectorXd surface_gradient;
  Eigen::VectorXd inner_gradient;
  std::vector<AugmentedPair> pairs;
  std::vector<std::size_t> pair_owner;
  std::size_t accepted = 0;
  std::vector<std::vector<double>> original_weights;
};

/// Renders a batch of original rays, builds and masks their augmentations,
/// evaluates the weighted loss and backpropagates it to the field parameters.
/// `normalizer` is the full batch size when this call handles one chunk.
inline ObjectiveResult evaluate_objective(const FieldModel& model, const ObjectiveConfig& cfg, const RayBatch& batch,
                                          long iteration, const ObjectiveOptions& opt = {},
                                          std::optional<double> normalizer = std::nullopt) {
  const std::size_t nrays = batch.rays.size();
  const int mult = std::max(1, cfg.augment_multiplier);
  if (batch.targets.size() != nrays) fail(ErrorCode::ShapeMismatch, "one target per ray is required");
  ObjectiveResult res;
  const std::size_t nparams = model.parameter_count();
  res.original_gradient = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nparams));
  res.surface_gradient = res.original_gradient;
  res.inner_gradient = res.original_gradient;

  std::vector<JitterKey> keys;
  if (cfg.jitter) {
    for (std::size_t k = 0; k < nrays; ++k)
      keys.push_back({cfg.seed, static_cast<std::uint64_t>(iteration), k < batch.ray_ids.size() ? batch.ray_ids[k] : k});
  }
  const RenderedBatch originals = render_batch(model, batch.rays, cfg.samples, keys, cfg.background);

  const TermWeights lw = TermWeights::at(cfg.loss, iteration);
  const bool augment = lw.augmentation_active() || opt.force_augmentation;

  std::vector<Ray> surface_rays;
  if (augment) {
    if (batch.draws.size() != nrays * static_cast<std::size_t>(mult))
      fail(ErrorCode::ShapeMismatch, "augment_multiplier draws per ray are required");
    for (std::size_t k = 0; k < nrays; ++k) {
      if (!(originals.profiles[k].weight_sum() > 0.0)) continue;
      for (int j = 0; j < mult; ++j) {
        try {
          res.pairs.push_back(build_augmented_pair(batch.rays[k], originals.profiles[k], batch.draws[k * mult + j]));
        } catch (const Error& e) {
          if (e.code() != ErrorCode::AllWeightsZero && e.code() != ErrorCode::NonPositiveRadius &&
              e.code() != ErrorCode::DegenerateDirection)
            throw;
          continue;
        }
        res.pair_owner.push_back(k);
        surface_rays.push_back(res.pairs.back().surface_ray);
      }
    }
  }
  const RenderedBatch surfaces = render_batch(model, surface_rays, cfg.samples, {}, cfg.background);

  std::vector<bool> clip(res.pairs.size(), false);
  std::vector<Ray> inner_rays;
  std::vector<std::size_t> inner_of(res.pairs.size(), static_cast<std::size_t>(-1));
  for (std::size_t p = 0; p < res.pairs.size(); ++p) {
    AugmentedPair& pair = res.pairs[p];
    pair.mask = opt.mask_override ? *opt.mask_override
                                  : consistency_mask(originals.profiles[res.pair_owner[p]], surfaces.profiles[p], cfg.mask);
    clip[p] = should_clip(pair.original.direction, pair.surface_ray.direction, cfg.mask);
    if (pair.mask) {
      ++res.accepted;
      inner_of[p] = inner_rays.size();
      inner_rays.push_back(pair.inner_ray);
    }
  }
  const RenderedBatch inners = render_batch(model, inner_rays, cfg.samples, {}, cfg.background);

  // One loss entry per original ray; extra pairs become entries that carry
  // only augmentation terms.
  std::vector<RayLossInput> inputs;
  std::vector<std::size_t> entry_owner;
  std::vector<std::optional<std::size_t>> entry_pair;
  std::vector<std::optional<std::size_t>> first_pair(nrays);
  std::vector<std::vector<std::size_t>> extra_pairs(nrays);
  for (std::size_t p = 0; p < res.pairs.size(); ++p) {
    const std::size_t k = res.pair_owner[p];
    if (!first_pair[k]) first_pair[k] = p;
    else extra_pairs[k].push_back(p);
  }
  auto make_entry = [&](std::size_t k, std::optional<std::size_t> p, bool original_terms) {
    RayLossInput in{originals.view(k), batch.targets[k], cfg.background, std::nullopt, std::nullopt};
    in.original_terms = original_terms;
    if (opt.rc_reference) in.rc_reference = opt.rc_reference->at(k);
    if (p) {
      in.surface.emplace(surfaces.view(*p));
      in.mask = res.pairs[*p].mask;
      in.clip = clip[*p];
      if (inner_of[*p] != static_cast<std::size_t>(-1)) in.inner.emplace(inners.view(inner_of[*p]));
    }
    inputs.push_back(std::move(in));
    entry_owner.push_back(k);
    entry_pair.push_back(p);
  };
  for (std::size_t k = 0; k < nrays; ++k) {
    make_entry(k, first_pair[k], true);
    for (std::size_t p : extra_pairs[k]) make_entry(k, p, false);
  }

  for (const BlendingProfile& p : originals.profiles) res.original_weights.push_back(p.weights);
  std::vector<RayLossGradient> grads;
  res.loss = total_loss(inputs, cfg.loss, iteration, opt.want_gradient ? &grads : nullptr,
                        normalizer ? normalizer : std::optional<double>(static_cast<double>(nrays)));
  if (!opt.want_gradient) return res;

  std::vector<RayGradient> g_orig;
  g_orig.reserve(nrays);
  for (std::size_t k = 0; k < nrays; ++k) g_orig.emplace_back(originals.profiles[k].size());
  std::vector<RayGradient> g_surf(surfaces.size()), g_inner(inners.size());
  for (std::size_t p = 0; p < surfaces.size(); ++p) g_surf[p] = RayGradient(surfaces.profiles[p].size());
  for (std::size_t q = 0; q < inners.size(); ++q) g_inner[q] = RayGradient(inners.profiles[q].size());

  for (std::size_t e = 0; e < inputs.size(); ++e) {
    RayLossGradient& g = grads[e];
    RayGradient& go = g_orig[entry_owner[e]];
    for (std::size_t i = 0; i < go.d_weights.size(); ++i) go.d_weights[i] += g.original.d_weights[i];
    go.d_color += g.original.d_color;
    go.d_sample_colors += g.original.d_sample_colors;
    if (g.original.d_features.size() != 0) {
      if (go.d_features.size() == 0) go.d_features = g.original.d_features;
      else go.d_features += g.original.d_features;
    }
    if (const auto p = entry_pair[e]) {
      g_surf[*p] = std::move(g.surface);
      if (inner_of[*p] != static_cast<std::size_t>(-1)) g_inner[inner_of[*p]] = std::move(g.inner);
    }
  }

  backward_batch(model, originals, g_orig, cfg.background, res.original_gradient);
  backward_batch(model, surfaces, g_surf, cfg.background, res.surface_gradient);
  backward_batch(model, inners, g_inner, cfg.background, res.inner_gradient);
  res.gradient = res.original_gradient + res.surface_gradient + res.inner_gradient;
  return res;
}

}  // namespace divcon
