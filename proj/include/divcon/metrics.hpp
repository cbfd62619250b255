#pragma once

#include "divcon/core.hpp"
#include "divcon/image.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace divcon {

inline constexpr double kPsnrCap = 99.0;

inline double mean_squared_error(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.data.empty()) fail(ErrorCode::ShapeMismatch, "images differ in shape");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

/// 10 log10(1 / MSE) for images in [0, 1], capped for identical inputs.
inline double psnr(const Image& a, const Image& b) {
  const double mse = mean_squared_error(a, b);
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace detail {

inline std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size);
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - half;
    k[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable filtering keeping only windows that fit inside the image.
inline std::vector<double> filter_valid(const std::vector<double>& img, int w, int h, const std::vector<double>& k) {
  const int size = static_cast<int>(k.size());
  const int ow = w - size + 1, oh = h - size + 1;
  std::vector<double> tmp(static_cast<std::size_t>(ow) * h, 0.0), out(static_cast<std::size_t>(ow) * oh, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < size; ++i) acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < size; ++i) acc += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  return out;
}

}  // namespace detail

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// Mean local SSIM with a Gaussian window, per channel, averaged over
/// channels. Only windows lying fully inside the image are used.
inline double ssim(const Image& a, const Image& b, const SsimOptions& opt = {}) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, "images differ in shape");
  if (a.width < opt.window || a.height < opt.window)
    fail(ErrorCode::ShapeMismatch, "image smaller than the SSIM window");
  const std::vector<double> k = detail::gaussian_kernel(opt.window, opt.sigma);
  const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
  const int w = a.width, h = a.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  double total = 0.0;
  for (int c = 0; c < a.channels; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a.data[i * a.channels + c];
      y[i] = b.data[i * b.channels + c];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, w, h, k), my = detail::filter_valid(y, w, h, k);
    const auto sxx = detail::filter_valid(xx, w, h, k), syy = detail::filter_valid(yy, w, h, k);
    const auto sxy = detail::filter_valid(xy, w, h, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return std::clamp(total / a.channels, -1.0, 1.0);
}

struct AvgeResult {
  double value = 0.0;
  int terms = 2;  // 2 when LPIPS is unavailable
};

/// Geometric mean of 10^(-PSNR/10), sqrt(1 - SSIM) and, when given, LPIPS.
inline AvgeResult avge(double psnr_db, double ssim_value, std::optional<double> lpips = std::nullopt) {
  const double mse = std::pow(10.0, -psnr_db / 10.0);
  const double dssim = std::sqrt(std::max(0.0, 1.0 - ssim_value));
  if (lpips) return {std::cbrt(mse * dssim * *lpips), 3};
  return {std::sqrt(mse * dssim), 2};
}

struct ImageMetrics {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double avge = 0.0;
};

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double avge = 0.0;
  int avge_terms = 2;
  std::vector<ImageMetrics> images;
};

/// Per-image metrics and their means (AVGE is computed from the mean PSNR and
/// SSIM, as is conventional).
inline MetricsReport evaluate_images(const std::vector<Image>& pred, const std::vector<Image>& gt,
                                     const std::vector<std::string>& names = {}) {
  if (pred.size() != gt.size() || pred.empty()) fail(ErrorCode::ShapeMismatch, "image lists differ in length");
  MetricsReport r;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ImageMetrics m;
    m.name = i < names.size() ? names[i] : std::to_string(i);
    m.psnr = psnr(pred[i], gt[i]);
    m.ssim = ssim(pred[i], gt[i]);
    m.avge = avge(m.psnr, m.ssim).value;
    r.psnr += m.psnr / static_cast<double>(pred.size());
    r.ssim += m.ssim / static_cast<double>(pred.size());
    r.images.push_back(m);
  }
  r.avge = avge(r.psnr, r.ssim).value;
  return r;
}

}  // namespace divcon
