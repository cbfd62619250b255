#pragma once

#include "divcon/consistency.hpp"
#include "divcon/core.hpp"
#include "divcon/profile.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace divcon {

enum class MnllCenter {
  PerSample,  // components centered at each sample color c''_i
  RayColor,   // single Laplacian centered at the composited C(r'')
};

enum class FeaturePairing {
  Matched,   // X_i with X'_i: equidistant from the surface point
  Reversed,  // X_i with X'_{N-1-i}: no positional correspondence
};

struct LossConfig {
  double temperature = 0.1;
  double lambda_rc = 0.1;
  double lambda_pbf = 0.01;
  double lambda_mnll = 0.1;
  double lambda_nll = 0.1;
  double lambda_ue = 0.01;
  double laplace_scale = 0.1;
  int ue_halfwidth = 2;
  int warmup_iters = 500;
  bool two_sided_rc = false;
  MnllCenter mnll_center = MnllCenter::PerSample;
  FeaturePairing pairing = FeaturePairing::Matched;
  /// Treat the background as one more mixture component with weight T_{N+1}.
  bool nll_background_component = true;

  void validate() const {
    if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
    if (!(laplace_scale > 0.0)) fail(ErrorCode::InvalidArgument, "Laplace scale must be positive");
    for (double l : {lambda_rc, lambda_pbf, lambda_mnll, lambda_nll, lambda_ue})
      if (!(l >= 0.0)) fail(ErrorCode::InvalidArgument, "loss weights must be non-negative");
    if (ue_halfwidth < 0) fail(ErrorCode::InvalidArgument, "emptiness half-width must be non-negative");
  }
};

// ---------------------------------------------------------------------------
// Elementary terms. Each returns its value together with the gradient of
// that value with respect to its differentiable inputs.
// ---------------------------------------------------------------------------

struct MseResult {
  double value = 0.0;
  std::vector<Vec3> d_pred;
};

/// Sum of squared color errors divided by the batch size.
inline MseResult mse_loss(std::span<const Vec3> pred, std::span<const Vec3> target) {
  if (pred.size() != target.size()) fail(ErrorCode::ShapeMismatch, "prediction and target batch sizes differ");
  MseResult r;
  r.d_pred.resize(pred.size());
  if (pred.empty()) return r;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Vec3 diff = pred[i] - target[i];
    r.value += diff.squaredNorm() * inv;
    r.d_pred[i] = 2.0 * inv * diff;
  }
  return r;
}

inline std::vector<double> log_softmax(std::span<const double> x, double temperature = 1.0) {
  if (!(temperature > 0.0)) fail(ErrorCode::InvalidArgument, "temperature must be positive");
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : x) mx = std::max(mx, v / temperature);
  double sum = 0.0;
  for (double v : x) sum += std::exp(v / temperature - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / temperature - lse;
  return out;
}

/// softmax(w / T) with max subtraction.
inline std::vector<double> tempered_softmax(std::span<const double> weights, double temperature) {
  std::vector<double> out = log_softmax(weights, temperature);
  for (double& v : out) v = std::exp(v);
  return out;
}

struct RayConsistencyResult {
  double value = 0.0;
  std::vector<double> d_original;   // zero unless two-sided
  std::vector<double> d_augmented;
};

/// KL(P_T || Q_T) between tempered softmaxes of the original and augmented
/// weights. With `clip`, both weight vectors are zeroed after the original's
/// argmax s before the softmax.
inline RayConsistencyResult ray_consistency_term(std::span<const double> w, std::span<const double> w_aug,
                                                 std::size_t s, double temperature, bool clip,
                                                 bool two_sided = false) {
  if (w.size() != w_aug.size() || w.empty()) fail(ErrorCode::ShapeMismatch, "weight vectors differ in length");
  std::vector<double> a(w.begin(), w.end()), b(w_aug.begin(), w_aug.end());
  if (clip) {
    a = clip_weights(a, s);
    b = clip_weights(b, s);
  }
  const std::vector<double> log_p = log_softmax(a, temperature);
  const std::vector<double> log_q = log_softmax(b, temperature);
  const std::size_t n = a.size();
  RayConsistencyResult r;
  r.d_original.assign(n, 0.0);
  r.d_augmented.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) r.value += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  for (std::size_t i = 0; i < n; ++i) {
    if (clip && i > s) continue;  // clipped entries are constants
    const double p = std::exp(log_p[i]), q = std::exp(log_q[i]);
    r.d_augmented[i] = (q - p) / temperature;
    if (two_sided) r.d_original[i] = p * (log_p[i] - log_q[i] - r.value) / temperature;
  }
  return r;
}

/// Jensen-Shannon divergence in nats of two distributions on the same support.
inline double jensen_shannon(std::span<const double> p, std::span<const double> q) {
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) js += 0.5 * p[i] * std::log(p[i] / m);
    if (q[i] > 0.0) js += 0.5 * q[i] * std::log(q[i] / m);
  }
  return std::max(js, 0.0);
}

struct FeatureLossResult {
  double value = 0.0;
  Eigen::MatrixXd d_features;
  Eigen::MatrixXd d_features_aug;
};

/// Mean over samples of JSD(softmax(h_i), softmax(h'_j)) where j is the
/// paired index (j = i for matched, equidistant pairs).
inline FeatureLossResult pbf_term(const Eigen::Ref<const Eigen::MatrixXd>& features,
                                  const Eigen::Ref<const Eigen::MatrixXd>& features_aug,
                                  FeaturePairing pairing = FeaturePairing::Matched) {
  if (features.rows() != features_aug.rows() || features.cols() != features_aug.cols() || features.cols() == 0)
    fail(ErrorCode::ShapeMismatch, "feature lists differ in shape");
  const Eigen::Index n = features.cols(), dim = features.rows();
  FeatureLossResult r;
  r.d_features = Eigen::MatrixXd::Zero(dim, n);
  r.d_features_aug = Eigen::MatrixXd::Zero(dim, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> col(dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index j = pairing == FeaturePairing::Matched ? i : n - 1 - i;
    for (Eigen::Index k = 0; k < dim; ++k) col[k] = features(k, i);
    const std::vector<double> p = tempered_softmax(col, 1.0);
    for (Eigen::Index k = 0; k < dim; ++k) col[k] = features_aug(k, j);
    const std::vector<double> q = tempered_softmax(col, 1.0);
    r.value += inv_n * jensen_shannon(p, q);
    // dJSD/dp_k = 0.5 log(p_k / m_k); then through the softmax Jacobian.
    double gp_mean = 0.0, gq_mean = 0.0;
    std::vector<double> gp(dim), gq(dim);
    for (Eigen::Index k = 0; k < dim; ++k) {
      const double m = 0.5 * (p[k] + q[k]);
      gp[k] = p[k] > 0.0 ? 0.5 * std::log(p[k] / m) : 0.0;
      gq[k] = q[k] > 0.0 ? 0.5 * std::log(q[k] / m) : 0.0;
      gp_mean += p[k] * gp[k];
      gq_mean += q[k] * gq[k];
    }
    for (Eigen::Index k = 0; k < dim; ++k) {
      r.d_features(k, i) += inv_n * p[k] * (gp[k] - gp_mean);
      r.d_features_aug(k, j) += inv_n * q[k] * (gq[k] - gq_mean);
    }
  }
  return r;
}

struct MixtureNllResult {
  double value = 0.0;
  std::vector<double> d_weights;
  Eigen::Matrix3Xd d_colors;
};

/// Per-channel independent Laplace log-density of `target` around `center`.
inline double laplace_log_density(const Vec3& target, const Vec3& center, double b) {
  double ll = 0.0;
  for (int c = 0; c < 3; ++c) ll += -std::abs(target[c] - center[c]) / b - std::log(2.0 * b);
  return ll;
}

/// -log sum_i pi_i Laplace(target; c_i, b) with pi_i = w_i / sum(w), in log
/// space. Components with zero weight drop out.
inline MixtureNllResult mixture_nll(std::span<const double> weights, const Eigen::Ref<const Eigen::Matrix3Xd>& colors,
                                    const Vec3& target, double b) {
  const std::size_t n = weights.size();
  if (static_cast<std::size_t>(colors.cols()) != n) fail(ErrorCode::ShapeMismatch, "weights and colors differ");
  if (!(b > 0.0)) fail(ErrorCode::InvalidArgument, "Laplace scale must be positive");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) fail(ErrorCode::InvalidArgument, "negative mixture weight");
    wsum += w;
  }
  if (!(wsum > 0.0)) fail(ErrorCode::AllWeightsZero, "mixture has no mass");
  const double log_wsum = std::log(wsum);

  std::vector<double> ll(n), a(n, -std::numeric_limits<double>::infinity());
  double amax = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    ll[i] = laplace_log_density(target, colors.col(static_cast<Eigen::Index>(i)), b);
    if (weights[i] > 0.0) a[i] = std::log(weights[i]) - log_wsum + ll[i];
    amax = std::max(amax, a[i]);
  }
  double sum = 0.0;
  for (double v : a) sum += std::exp(v - amax);
  const double lse = amax + std::log(sum);

  MixtureNllResult r;
  r.value = -lse;
  r.d_weights.assign(n, 0.0);
  r.d_colors = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(n));
  const double inv_wsum = 1.0 / wsum;
  for (std::size_t i = 0; i < n; ++i) {
    // d(-lse)/dw_i = 1/S - L_i / (S p); L_i / (S p) = exp(ll_i - log S - lse).
    r.d_weights[i] = inv_wsum - std::exp(ll[i] - log_wsum - lse);
    const double gamma = std::exp(a[i] - lse);
    for (int c = 0; c < 3; ++c) {
      const double diff = target[c] - colors(c, static_cast<Eigen::Index>(i));
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      r.d_colors(c, static_cast<Eigen::Index>(i)) = -gamma * sign / b;
    }
  }
  return r;
}

struct LaplaceNllResult {
  double value = 0.0;
  Vec3 d_center = Vec3::Zero();
};

/// Single-component variant: -log Laplace(target; center, b).
inline LaplaceNllResult laplace_nll(const Vec3& center, const Vec3& target, double b) {
  if (!(b > 0.0)) fail(ErrorCode::InvalidArgument, "Laplace scale must be positive");
  LaplaceNllResult r;
  r.value = -laplace_log_density(target, center, b);
  for (int c = 0; c < 3; ++c) {
    const double diff = center[c] - target[c];
    r.d_center[c] = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / b;
  }
  return r;
}

struct EmptinessResult {
  double value = 0.0;
  std::vector<double> d_weights;
};

/// Blending mass farther than k bins from the argmax s.
inline EmptinessResult emptiness_loss(std::span<const double> weights, std::size_t s, int k) {
  if (k < 0) fail(ErrorCode::InvalidArgument, "half-width must be non-negative");
  EmptinessResult r;
  r.d_weights.assign(weights.size(), 0.0);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const long gap = std::labs(static_cast<long>(i) - static_cast<long>(s));
    if (gap > k) {
      r.value += weights[i];
      r.d_weights[i] = 1.0;
    }
  }
  return r;
}

inline EmptinessResult emptiness_loss(const BlendingProfile& profile, int k) {
  return emptiness_loss(profile.weights, profile.argmax_index, k);
}

// ---------------------------------------------------------------------------
// Weighted total over a batch of rays.
// ---------------------------------------------------------------------------

/// Read-only view of one rendered ray: its profile plus per-sample colors and
/// (when available) bottleneck features, one column per sample.
struct RayView {
  const BlendingProfile* profile = nullptr;
  Eigen::Ref<const Eigen::Matrix3Xd> colors;
  Eigen::Ref<const Eigen::MatrixXd> features;

  RayView(const BlendingProfile& p, const Eigen::Ref<const Eigen::Matrix3Xd>& c,
          const Eigen::Ref<const Eigen::MatrixXd>& f)
      : profile(&p), colors(c), features(f) {}
};

struct RayLossInput {
  RayView original;
  Vec3 target;
  Vec3 background = Vec3::Zero();
  /// Present when the ray was augmented this step.
  std::optional<RayView> surface;
  std::optional<RayView> inner;
  bool mask = false;
  bool clip = false;
  /// False for extra augmentation pairs of a ray already in the batch: their
  /// original-ray terms (MSE, NLL, emptiness) are not counted again.
  bool original_terms = true;
  /// Overrides the original weights on the fixed side of a one-sided ray
  /// consistency term; empty means use them.
  std::span<const double> rc_reference;
};

/// Gradients with respect to one rendered ray's profile outputs.
struct RayGradient {
  std::vector<double> d_weights;
  Vec3 d_color = Vec3::Zero();
  Eigen::Matrix3Xd d_sample_colors;
  Eigen::MatrixXd d_features;  // empty when no feature gradient flows

  explicit RayGradient(std::size_t n = 0)
      : d_weights(n, 0.0), d_sample_colors(Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(n))) {}

  bool is_zero() const {
    for (double v : d_weights)
      if (v != 0.0) return false;
    return d_color.isZero(0.0) && d_sample_colors.isZero(0.0) && (d_features.size() == 0 || d_features.isZero(0.0));
  }
};

struct RayLossGradient {
  RayGradient original;
  RayGradient surface;
  RayGradient inner;
};

struct LossBreakdown {
  double mse = 0.0;
  double rc = 0.0;
  double pbf = 0.0;
  double mnll = 0.0;
  double nll = 0.0;
  double ue = 0.0;
  double total = 0.0;
  double masked_fraction = 0.0;  // accepted augmented rays / augmented rays
  std::size_t augmented_rays = 0;
};

/// Effective term weights at an iteration: augmentation terms are off during
/// warmup.
struct TermWeights {
  double rc = 0.0, pbf = 0.0, mnll = 0.0, nll = 0.0, ue = 0.0;

  static TermWeights at(const LossConfig& cfg, long iteration) {
    const bool warm = iteration < cfg.warmup_iters;
    return TermWeights{warm ? 0.0 : cfg.lambda_rc, warm ? 0.0 : cfg.lambda_pbf, warm ? 0.0 : cfg.lambda_mnll,
                       cfg.lambda_nll, cfg.lambda_ue};
  }
  bool augmentation_active() const { return rc > 0.0 || pbf > 0.0 || mnll > 0.0; }
};

namespace detail {

/// Mixture NLL over a ray's samples, optionally with the background as an
/// extra component of weight T_{N+1} = 1 - sum(w). Returns gradients with
/// respect to the ray's weights and sample colors.
inline MixtureNllResult ray_mixture_nll(const RayView& ray, const Vec3& target, const Vec3& background,
                                        const LossConfig& cfg) {
  const BlendingProfile& p = *ray.profile;
  const std::size_t n = p.size();
  if (!cfg.nll_background_component) return mixture_nll(p.weights, ray.colors, target, cfg.laplace_scale);
  std::vector<double> w(p.weights);
  w.push_back(std::max(p.residual_transmittance, 0.0));
  Eigen::Matrix3Xd c(3, static_cast<Eigen::Index>(n + 1));
  c.leftCols(static_cast<Eigen::Index>(n)) = ray.colors;
  c.col(static_cast<Eigen::Index>(n)) = background;
  MixtureNllResult full = mixture_nll(w, c, target, cfg.laplace_scale);
  MixtureNllResult r;
  r.value = full.value;
  r.d_weights.resize(n);
  const double d_residual = full.d_weights[n];
  for (std::size_t i = 0; i < n; ++i) r.d_weights[i] = full.d_weights[i] - d_residual;
  r.d_colors = full.d_colors.leftCols(static_cast<Eigen::Index>(n));
  return r;
}

inline void add_scaled(std::vector<double>& dst, std::span<const double> src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

}  // namespace detail

/// L = L_MSE + l1 L_RC + l2 L_PBF + l3 L_MNLL + l4 L_NLL + l5 L_UE, each
/// summed over rays and divided by the batch size. Augmentation terms are
/// multiplied by the ray's mask, so a rejected ray contributes exactly zero.
/// Reported components are unweighted.
///
/// `normalizer` overrides the batch size used for the division; a caller that
/// splits one batch into chunks passes the full batch size to every chunk.
inline LossBreakdown total_loss(std::span<const RayLossInput> batch, const LossConfig& cfg, long iteration,
                                std::vector<RayLossGradient>* grads = nullptr,
                                std::optional<double> normalizer = std::nullopt) {
  cfg.validate();
  if (iteration < 0) fail(ErrorCode::InvalidArgument, "iteration must be non-negative");
  const TermWeights lw = TermWeights::at(cfg, iteration);
  LossBreakdown out;
  if (grads) grads->clear();
  if (batch.empty()) return out;
  std::size_t originals = 0;
  for (const auto& r : batch) originals += r.original_terms ? 1 : 0;
  const double denom = normalizer ? *normalizer : static_cast<double>(std::max<std::size_t>(originals, 1));
  if (!(denom > 0.0)) fail(ErrorCode::InvalidArgument, "loss normalizer must be positive");
  const double inv_b = 1.0 / denom;
  std::size_t accepted = 0;

  for (const RayLossInput& ray : batch) {
    const BlendingProfile& po = *ray.original.profile;
    const std::size_t n = po.size();
    RayLossGradient g{RayGradient(n), RayGradient(ray.surface ? ray.surface->profile->size() : 0),
                      RayGradient(ray.inner ? ray.inner->profile->size() : 0)};

    if (ray.original_terms) {
      const Vec3 diff = po.rendered_color - ray.target;
      out.mse += inv_b * diff.squaredNorm();
      g.original.d_color += 2.0 * inv_b * diff;

      if (po.weight_sum() > 0.0 || cfg.nll_background_component) {
        const MixtureNllResult nll = detail::ray_mixture_nll(ray.original, ray.target, ray.background, cfg);
        out.nll += inv_b * nll.value;
        if (lw.nll > 0.0) {
          detail::add_scaled(g.original.d_weights, nll.d_weights, lw.nll * inv_b);
          g.original.d_sample_colors += (lw.nll * inv_b) * nll.d_colors;
        }
      }
      const EmptinessResult ue = emptiness_loss(po, cfg.ue_halfwidth);
      out.ue += inv_b * ue.value;
      if (lw.ue > 0.0) detail::add_scaled(g.original.d_weights, ue.d_weights, lw.ue * inv_b);
    }

    if (ray.surface) {
      ++out.augmented_rays;
      if (ray.mask) {
        ++accepted;
        const RayView& sr = *ray.surface;
        const bool frozen = !ray.rc_reference.empty() && !cfg.two_sided_rc;
        const RayConsistencyResult rc = ray_consistency_term(frozen ? ray.rc_reference : std::span<const double>(po.weights), sr.profile->weights, po.argmax_index,
                                                             cfg.temperature, ray.clip, cfg.two_sided_rc);
        out.rc += inv_b * rc.value;
        if (lw.rc > 0.0) {
          detail::add_scaled(g.surface.d_weights, rc.d_augmented, lw.rc * inv_b);
          if (cfg.two_sided_rc) detail::add_scaled(g.original.d_weights, rc.d_original, lw.rc * inv_b);
        }
        if (ray.original.features.size() != 0 && sr.features.size() != 0) {
          const FeatureLossResult pbf = pbf_term(ray.original.features, sr.features, cfg.pairing);
          out.pbf += inv_b * pbf.value;
          if (lw.pbf > 0.0) {
            g.original.d_features = (lw.pbf * inv_b) * pbf.d_features;
            g.surface.d_features = (lw.pbf * inv_b) * pbf.d_features_aug;
          }
        }
        if (ray.inner) {
          const RayView& ir = *ray.inner;
          if (cfg.mnll_center == MnllCenter::RayColor) {
            const LaplaceNllResult l = laplace_nll(ir.profile->rendered_color, ray.target, cfg.laplace_scale);
            out.mnll += inv_b * l.value;
            if (lw.mnll > 0.0) g.inner.d_color += (lw.mnll * inv_b) * l.d_center;
          } else if (ir.profile->weight_sum() > 0.0 || cfg.nll_background_component) {
            const MixtureNllResult l = detail::ray_mixture_nll(ir, ray.target, ray.background, cfg);
            out.mnll += inv_b * l.value;
            if (lw.mnll > 0.0) {
              detail::add_scaled(g.inner.d_weights, l.d_weights, lw.mnll * inv_b);
              g.inner.d_sample_colors += (lw.mnll * inv_b) * l.d_colors;
            }
          }
        }
      }
    }
    if (grads) grads->push_back(std::move(g));
  }

  out.masked_fraction = out.augmented_rays ? static_cast<double>(accepted) / out.augmented_rays : 0.0;
  out.total = out.mse + lw.rc * out.rc + lw.pbf * out.pbf + lw.mnll * out.mnll + lw.nll * out.nll + lw.ue * out.ue;
  return out;
}

}  // namespace divcon
