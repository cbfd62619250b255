#include "divcon/core.hpp"
#include "divcon/rng.hpp"

#include <gtest/gtest.h>

#include <set>
#include <vector>

using namespace divcon;

TEST(CounterRng, SameKeyGivesSameSequence) {
  CounterRng a(42, Stream::SphereDraw, 7, 3), b(42, Stream::SphereDraw, 7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(CounterRng, KeyPartsSeparateStreams) {
  std::set<std::uint64_t> firsts;
  for (std::uint64_t seed : {0ULL, 1ULL})
    for (Stream s : {Stream::RaySelect, Stream::SphereDraw, Stream::Jitter})
      for (std::uint64_t it : {0ULL, 1ULL})
        for (std::uint64_t item : {0ULL, 1ULL}) firsts.insert(CounterRng(seed, s, it, item).next_u64());
  EXPECT_EQ(firsts.size(), 24u);
}

TEST(CounterRng, UniformStaysInUnitInterval) {
  CounterRng r(5, Stream::Probe);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(CounterRng, BelowCoversRangeWithoutOverflow) {
  CounterRng r(9, Stream::Probe);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hist[v];
  }
  for (int c : hist) EXPECT_NEAR(c, 10000, 500);
}

TEST(Error, CarriesCodeAndMessage) {
  try {
    fail(ErrorCode::GridMismatch, "grids differ");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GridMismatch);
    EXPECT_NE(std::string(e.what()).find("grids differ"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("GridMismatch"), std::string::npos);
  }
}

TEST(AllFinite, DetectsNanAndInf) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(4);
  EXPECT_TRUE(all_finite(v));
  v[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(all_finite(v));
  EXPECT_FALSE(all_finite(Vec3(0, std::numeric_limits<double>::infinity(), 0)));
}
