#pragma once

#include "divcon/core.hpp"
#include "divcon/profile.hpp"

#include <algorithm>
#include <cstdlib>
#include <span>
#include <vector>

namespace divcon {

enum class MaskSource {
  Argmax,         // s = argmax of the weights
  RenderedDepth,  // s = bin holding the rendered (expected) depth
};

struct ClipMode {
  bool enabled = false;
  double angle_threshold = 60.0 * kPi / 180.0;  // radians
};

struct MaskConfig {
  int epsilon = 2;
  ClipMode clip{};
  MaskSource source = MaskSource::Argmax;
};

/// Index of the bin that contains the profile's rendered depth.
inline std::size_t depth_index(const BlendingProfile& p) {
  const std::size_t n = p.grid.size();
  if (n == 0) fail(ErrorCode::GridMismatch, "empty profile");
  const auto it = std::upper_bound(p.grid.edges.begin(), p.grid.edges.end(), p.rendered_depth);
  const long idx = static_cast<long>(it - p.grid.edges.begin()) - 1;
  return static_cast<std::size_t>(std::clamp<long>(idx, 0, static_cast<long>(n) - 1));
}

inline std::size_t surface_index(const BlendingProfile& p, MaskSource source) {
  return source == MaskSource::Argmax ? first_argmax(p.weights) : depth_index(p);
}

/// Accepts an augmented ray when it peaks at (nearly) the same coarse index as
/// its original. Both profiles must come from equal-width grids with the same
/// bin count and width; callers pass detached profiles.
inline bool consistency_mask(const BlendingProfile& original, const BlendingProfile& augmented, const MaskConfig& cfg) {
  if (cfg.epsilon < 0) fail(ErrorCode::InvalidArgument, "mask tolerance must be non-negative");
  const std::size_t n = original.size();
  if (n == 0 || augmented.size() != n || original.grid.size() != n || augmented.grid.size() != n)
    fail(ErrorCode::GridMismatch, "profiles have different sample counts");
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(original.grid.deltas[i] - augmented.grid.deltas[i]) > 1e-9)
      fail(ErrorCode::GridMismatch, "profiles have different bin widths");

  const auto s = static_cast<long>(surface_index(original, cfg.source));
  const auto s_aug = static_cast<long>(surface_index(augmented, cfg.source));
  return std::labs(s - s_aug) <= cfg.epsilon;
}

/// Zeroes every weight after index s.
inline std::vector<double> clip_weights(std::span<const double> weights, std::size_t s) {
  if (s >= weights.size()) fail(ErrorCode::IndexOutOfRange, "clip index outside the weight vector");
  std::vector<double> out(weights.begin(), weights.end());
  for (std::size_t i = s + 1; i < out.size(); ++i) out[i] = 0.0;
  return out;
}

inline double angle_between(const Vec3& a, const Vec3& b) {
  const double na = a.norm(), nb = b.norm();
  if (!(na > 0.0) || !(nb > 0.0)) fail(ErrorCode::DegenerateDirection, "zero-length direction");
  // atan2 form stays accurate near 0 and pi where acos loses digits.
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

/// Far-viewpoint trigger for weight clipping.
inline bool should_clip(const Vec3& original_dir, const Vec3& augmented_dir, const MaskConfig& cfg) {
  const double angle = angle_between(original_dir, augmented_dir);
  return cfg.clip.enabled && angle > cfg.clip.angle_threshold;
}

}  // namespace divcon
