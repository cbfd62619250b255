#pragma once

#include "divcon/core.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace divcon {

/// Coarse sample layout along one ray. `edges` bound the N bins, `midpoints`
/// holds the t at which the field is queried (bin centers, or a stratified
/// offset inside each bin), and `deltas[i] = edges[i+1] - edges[i]`.
struct SampleGrid {
  std::vector<double> edges;
  std::vector<double> midpoints;
  std::vector<double> deltas;

  std::size_t size() const { return midpoints.size(); }
};

/// Output of compositing one ray. `weights[i] == transmittance[i] * alphas[i]`
/// is the invariant everything downstream relies on.
struct BlendingProfile {
  SampleGrid grid;
  std::vector<double> weights;
  std::vector<double> transmittance;
  std::vector<double> alphas;
  std::size_t argmax_index = 0;
  Vec3 rendered_color = Vec3::Zero();
  double rendered_depth = 0.0;
  /// T_{N+1}: the probability the ray leaves the sampled interval unabsorbed.
  double residual_transmittance = 1.0;

  std::size_t size() const { return weights.size(); }
  double weight_sum() const {
    double s = 0.0;
    for (double w : weights) s += w;
    return s;
  }
};

/// Lowest index attaining the maximum; ties resolve to the first occurrence.
inline std::size_t first_argmax(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::ShapeMismatch, "argmax of empty sequence");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace divcon
