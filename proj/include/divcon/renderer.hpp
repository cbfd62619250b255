#pragma once

#include "divcon/core.hpp"
#include "divcon/geometry.hpp"
#include "divcon/image.hpp"
#include "divcon/profile.hpp"
#include "divcon/rng.hpp"

#include <Eigen/Dense>

#include <concepts>
#include <span>
#include <vector>

namespace divcon {

/// Anything that maps a batch of (point, direction) columns to densities and
/// colors. FieldModel and the analytic scene bypass both qualify.
template <typename F>
concept RadianceField = requires(const F& f, const Eigen::Matrix3Xd& pts, const Eigen::Matrix3Xd& dirs) {
  { f.forward(pts, dirs).sigma } -> std::convertible_to<Eigen::VectorXd>;
  { f.forward(pts, dirs).color } -> std::convertible_to<Eigen::Matrix3Xd>;
};

/// Equal-width bins over [t_near, t_far]. Without jitter the field is queried
/// at bin centers; with jitter each bin gets one uniform offset.
inline SampleGrid coarse_sample(const Ray& ray, int n, bool jitter = false, CounterRng* rng = nullptr) {
  if (n < 2) fail(ErrorCode::InvalidArgument, "need at least two coarse samples");
  if (!(ray.t_far > ray.t_near)) fail(ErrorCode::InvalidArgument, "empty sampling interval");
  if (jitter && rng == nullptr) fail(ErrorCode::InvalidArgument, "jittered sampling needs a generator");
  SampleGrid g;
  g.edges.resize(n + 1);
  g.midpoints.resize(n);
  g.deltas.resize(n);
  const double width = (ray.t_far - ray.t_near) / n;
  for (int i = 0; i <= n; ++i) g.edges[i] = ray.t_near + width * i;
  g.edges[n] = ray.t_far;
  for (int i = 0; i < n; ++i) {
    g.deltas[i] = width;
    const double u = jitter ? rng->uniform() : 0.5;
    g.midpoints[i] = g.edges[i] + u * width;
  }
  return g;
}

/// Alpha compositing of N samples. `background` is added with the residual
/// transmittance T_{N+1}.
inline BlendingProfile volume_render(std::span<const double> sigmas, const Eigen::Matrix3Xd& colors,
                                     const SampleGrid& grid, const Vec3& background = Vec3::Zero()) {
  const std::size_t n = grid.size();
  if (sigmas.size() != n || static_cast<std::size_t>(colors.cols()) != n)
    fail(ErrorCode::ShapeMismatch, "samples do not match the grid");
  BlendingProfile p;
  p.grid = grid;
  p.weights.resize(n);
  p.transmittance.resize(n);
  p.alphas.resize(n);
  double optical_depth = 0.0;
  double weighted_t = 0.0;
  Vec3 color = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    if (sigmas[i] < 0.0) fail(ErrorCode::InvalidArgument, "negative density");
    const double tau = sigmas[i] * grid.deltas[i];
    p.transmittance[i] = std::exp(-optical_depth);
    p.alphas[i] = -std::expm1(-tau);
    p.weights[i] = p.transmittance[i] * p.alphas[i];
    optical_depth += tau;
    color += p.weights[i] * colors.col(static_cast<Eigen::Index>(i));
    weighted_t += p.weights[i] * grid.midpoints[i];
  }
  p.residual_transmittance = std::exp(-optical_depth);
  const double wsum = p.weight_sum();
  p.rendered_color = color + p.residual_transmittance * background;
  p.rendered_depth = weighted_t / std::max(wsum, 1e-12);
  p.argmax_index = first_argmax(p.weights);
  return p;
}

struct CompositeGradient {
  Eigen::VectorXd d_sigma;
  Eigen::Matrix3Xd d_color;
};

/// Backward pass of volume_render given dL/dw (one per sample, may be empty)
/// and dL/dC for the composited color.
inline CompositeGradient volume_render_backward(const BlendingProfile& p, const Eigen::Matrix3Xd& colors,
                                                std::span<const double> d_weights, const Vec3& d_color,
                                                const Vec3& background = Vec3::Zero()) {
  const std::size_t n = p.size();
  if (!d_weights.empty() && d_weights.size() != n) fail(ErrorCode::ShapeMismatch, "weight gradient length");
  CompositeGradient g;
  g.d_sigma = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  g.d_color = Eigen::Matrix3Xd::Zero(3, static_cast<Eigen::Index>(n));

  // Effective gradient per weight, including the color composite and the
  // background term T_{N+1} = 1 - sum(w).
  std::vector<double> gw(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = colors.col(static_cast<Eigen::Index>(i));
    gw[i] = (d_weights.empty() ? 0.0 : d_weights[i]) + d_color.dot(col - background);
    g.d_color.col(static_cast<Eigen::Index>(i)) = p.weights[i] * d_color;
  }
  // dw_i/dsigma_k = delta_k (T_k - w_k) for i == k, -delta_k w_i for i > k.
  double suffix = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double delta = p.grid.deltas[k];
    g.d_sigma[static_cast<Eigen::Index>(k)] = delta * (gw[k] * (p.transmittance[k] - p.weights[k]) - suffix);
    suffix += gw[k] * p.weights[k];
  }
  return g;
}

/// Sample positions and (unnormalized) directions of one ray as columns.
inline void sample_points(const Ray& ray, const SampleGrid& grid, Eigen::Matrix3Xd& points, Eigen::Matrix3Xd& dirs,
                          Eigen::Index offset = 0) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    points.col(offset + static_cast<Eigen::Index>(i)) = ray.at(grid.midpoints[i]);
    dirs.col(offset + static_cast<Eigen::Index>(i)) = ray.direction;
  }
}

template <RadianceField Field>
BlendingProfile render_ray(const Field& field, const Ray& ray, int n, bool jitter = false, CounterRng* rng = nullptr,
                           const Vec3& background = Vec3::Zero()) {
  validate(ray);
  const SampleGrid grid = coarse_sample(ray, n, jitter, rng);
  Eigen::Matrix3Xd points(3, n), dirs(3, n);
  sample_points(ray, grid, points, dirs);
  const auto out = field.forward(points, dirs);
  return volume_render(std::span<const double>(out.sigma.data(), static_cast<std::size_t>(n)), out.color, grid,
                       background);
}

struct RenderedView {
  Image rgb;
  Image depth;  // single channel, t units along the ray
};

struct RenderOptions {
  int samples = 64;
  double t_near = 2.0;
  double t_far = 6.0;
  Vec3 background = Vec3::Zero();
  /// Rays per field evaluation; only a throughput knob.
  int rays_per_batch = 64;
};

/// One ray per pixel through the pixel center, rows top to bottom.
template <RadianceField Field>
RenderedView render_image(const Field& field, const Camera& camera, const RenderOptions& opt) {
  const int w = camera.width(), h = camera.height(), n = opt.samples;
  RenderedView view{Image(w, h, 3), Image(w, h, 1)};
  const int total = w * h;
  const int batch = std::max(1, opt.rays_per_batch);
  for (int start = 0; start < total; start += batch) {
    const int count = std::min(batch, total - start);
    std::vector<Ray> rays(count);
    std::vector<SampleGrid> grids(count);
    Eigen::Matrix3Xd points(3, static_cast<Eigen::Index>(count) * n), dirs(3, static_cast<Eigen::Index>(count) * n);
    for (int k = 0; k < count; ++k) {
      const int pix = start + k;
      rays[k] = camera.pixel_ray(pix % w, pix / w, opt.t_near, opt.t_far);
      grids[k] = coarse_sample(rays[k], n);
      sample_points(rays[k], grids[k], points, dirs, static_cast<Eigen::Index>(k) * n);
    }
    const auto out = field.forward(points, dirs);
    for (int k = 0; k < count; ++k) {
      const Eigen::Index off = static_cast<Eigen::Index>(k) * n;
      const BlendingProfile p =
          volume_render(std::span<const double>(out.sigma.data() + off, static_cast<std::size_t>(n)),
                        out.color.middleCols(off, n), grids[k], opt.background);
      const int pix = start + k;
      view.rgb.set_rgb(pix % w, pix / w, p.rendered_color);
      view.depth.at(pix % w, pix / w) = p.weight_sum() > 0.0 ? p.rendered_depth : 0.0;
    }
  }
  return view;
}

}  // namespace divcon
