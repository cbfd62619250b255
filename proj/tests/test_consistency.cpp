#include "divcon/consistency.hpp"
#include "divcon/rng.hpp"

#include <gtest/gtest.h>

using namespace divcon;

namespace {

BlendingProfile peaked(std::size_t n, std::size_t peak, double delta = 0.1) {
  BlendingProfile p;
  for (std::size_t i = 0; i <= n; ++i) p.grid.edges.push_back(1.0 + delta * i);
  for (std::size_t i = 0; i < n; ++i) {
    p.grid.midpoints.push_back(1.0 + delta * (i + 0.5));
    p.grid.deltas.push_back(delta);
  }
  p.weights.assign(n, 0.01);
  p.weights[peak] = 0.9;
  p.transmittance.assign(n, 1.0);
  p.alphas.assign(n, 0.0);
  p.argmax_index = peak;
  p.rendered_depth = p.grid.midpoints[peak];
  return p;
}

MaskConfig eps(int e, MaskSource src = MaskSource::Argmax) {
  MaskConfig c;
  c.epsilon = e;
  c.source = src;
  return c;
}

}  // namespace

TEST(ConsistencyMask, IndexExamples) {
  EXPECT_TRUE(consistency_mask(peaked(16, 5), peaked(16, 5), eps(0)));
  EXPECT_FALSE(consistency_mask(peaked(16, 5), peaked(16, 8), eps(2)));
  EXPECT_TRUE(consistency_mask(peaked(16, 5), peaked(16, 7), eps(2)));
  EXPECT_TRUE(consistency_mask(peaked(16, 5), peaked(16, 3), eps(2)));
}

TEST(ConsistencyMask, RejectsMismatchedGrids) {
  try {
    consistency_mask(peaked(16, 5), peaked(15, 5), eps(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
  try {
    consistency_mask(peaked(16, 5, 0.1), peaked(16, 5, 0.11), eps(2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
  }
  EXPECT_NO_THROW(consistency_mask(peaked(16, 5, 0.1), peaked(16, 5, 0.1 + 1e-11), eps(2)));
  EXPECT_THROW(consistency_mask(peaked(16, 5), peaked(16, 5), eps(-1)), Error);
}

TEST(ConsistencyMask, DepthSourceUsesBinOfExpectedDepth) {
  BlendingProfile a = peaked(16, 5), b = peaked(16, 5);
  // Same argmax, but b's expected depth sits three bins later.
  b.rendered_depth = b.grid.midpoints[8];
  EXPECT_TRUE(consistency_mask(a, b, eps(2)));
  EXPECT_FALSE(consistency_mask(a, b, eps(2, MaskSource::RenderedDepth)));
  EXPECT_TRUE(consistency_mask(a, b, eps(3, MaskSource::RenderedDepth)));
  EXPECT_EQ(depth_index(b), 8u);
  b.rendered_depth = b.grid.edges[9];  // a bin edge belongs to the bin it opens
  EXPECT_EQ(depth_index(b), 9u);
  b.rendered_depth = 100.0;
  EXPECT_EQ(depth_index(b), 15u);
  b.rendered_depth = -3.0;
  EXPECT_EQ(depth_index(b), 0u);
}

TEST(ConsistencyMask, SymmetricAndMonotone) {
  CounterRng rng(4, Stream::Probe);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto a = peaked(32, rng.below(32)), b = peaked(32, rng.below(32));
    for (MaskSource src : {MaskSource::Argmax, MaskSource::RenderedDepth}) {
      bool was = false;
      for (int e = 0; e < 34; ++e) {
        const bool m = consistency_mask(a, b, eps(e, src));
        ASSERT_EQ(m, consistency_mask(b, a, eps(e, src)));
        if (was) ASSERT_TRUE(m);
        was = was || m;
      }
      ASSERT_TRUE(was);
    }
  }
}

TEST(ClipWeights, Examples) {
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(clip_weights(w, 1), (std::vector<double>{0.1, 0.2, 0.0, 0.0}));
  EXPECT_EQ(clip_weights(w, 3), w);
  EXPECT_EQ(clip_weights(std::vector<double>(4, 0.0), 2), std::vector<double>(4, 0.0));
  try {
    clip_weights(w, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
  }
}

TEST(ShouldClip, Examples) {
  MaskConfig on;
  on.clip.enabled = true;
  on.clip.angle_threshold = 60.0 * kPi / 180.0;
  const Vec3 d(0.3, -0.2, 1.0);
  EXPECT_FALSE(should_clip(d, d, on));
  EXPECT_FALSE(should_clip(d, 3.0 * d, on));
  EXPECT_TRUE(should_clip(Vec3::UnitX(), Vec3::UnitY(), on));
  EXPECT_FALSE(should_clip(Vec3::UnitX(), Vec3(1, std::tan(59.0 * kPi / 180.0), 0), on));
  EXPECT_TRUE(should_clip(Vec3::UnitX(), Vec3(1, std::tan(61.0 * kPi / 180.0), 0), on));
  const MaskConfig off;
  EXPECT_FALSE(should_clip(Vec3::UnitX(), Vec3::UnitY(), off));
  EXPECT_FALSE(should_clip(Vec3::UnitX(), -Vec3::UnitX(), off));
  try {
    should_clip(Vec3::Zero(), Vec3::UnitX(), on);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateDirection);
  }
}
