#include "divcon/geometry.hpp"
#include "divcon/rng.hpp"

#include <gtest/gtest.h>

using namespace divcon;

namespace {

BlendingProfile profile_on(const std::vector<double>& midpoints, const std::vector<double>& weights, double delta = 1.0) {
  BlendingProfile p;
  p.grid.midpoints = midpoints;
  p.grid.deltas.assign(midpoints.size(), delta);
  for (double m : midpoints) p.grid.edges.push_back(m - 0.5 * delta);
  p.grid.edges.push_back(midpoints.back() + 0.5 * delta);
  p.weights = weights;
  p.transmittance.assign(weights.size(), 1.0);
  p.alphas.assign(weights.size(), 0.0);
  p.argmax_index = first_argmax(weights);
  return p;
}

SphereDraw draw(double theta, double phi, double r = 1.0) { return SphereDraw{theta, phi, r}; }

void expect_vec(const Vec3& a, const Vec3& b, double tol = 1e-12) {
  EXPECT_NEAR(a.x(), b.x(), tol);
  EXPECT_NEAR(a.y(), b.y(), tol);
  EXPECT_NEAR(a.z(), b.z(), tol);
}

Intrinsics square(int n, double focal) { return Intrinsics{focal, 0.5 * n, 0.5 * n, n, n}; }

}  // namespace

TEST(Ray, ValidateRejectsBadRays) {
  EXPECT_NO_THROW(validate(Ray{Vec3::Zero(), Vec3::UnitX(), 0.0, 1.0}));
  try {
    validate(Ray{Vec3::Zero(), Vec3::Zero(), 0.0, 1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateDirection);
  }
  EXPECT_THROW(validate(Ray{Vec3::Zero(), Vec3::UnitX(), 2.0, 1.0}), Error);
  EXPECT_THROW(validate(Ray{Vec3::Zero(), Vec3::UnitX(), -1.0, 1.0}), Error);
}

TEST(Camera, RejectsImproperRotation) {
  Mat3 flip = Mat3::Identity();
  flip(2, 2) = -1.0;
  EXPECT_THROW(Camera(flip, Vec3::Zero(), square(8, 8.0)), Error);
  Mat3 skew = Mat3::Identity();
  skew(0, 1) = 1e-6;
  EXPECT_THROW(Camera(skew, Vec3::Zero(), square(8, 8.0)), Error);
}

TEST(Camera, PrincipalPointLooksDownMinusZ) {
  const Camera cam(Mat3::Identity(), Vec3(1, 2, 3), square(8, 10.0));
  const Ray r = cam.image_ray(4.0, 4.0, 0.5, 2.0);
  expect_vec(r.origin, Vec3(1, 2, 3));
  expect_vec(r.direction, Vec3(0, 0, -1));
  // +u is right (+x), +v is down (-y).
  expect_vec(cam.image_ray(14.0, 4.0, 0, 1).direction, Vec3(1, 0, -1));
  expect_vec(cam.image_ray(4.0, 14.0, 0, 1).direction, Vec3(0, -1, -1));
}

TEST(Camera, LookAtCentralRayHitsTarget) {
  const Vec3 eye(3, -2, 1.5), target(0.2, 0.1, -0.3);
  const Camera cam = Camera::look_at(eye, target, Vec3::UnitZ(), square(64, 50.0));
  const Mat3& r = cam.rotation();
  EXPECT_LT((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  const Ray ray = cam.image_ray(32.0, 32.0, 0.0, 10.0);
  const Vec3 to_target = (target - eye).normalized();
  EXPECT_NEAR(ray.direction.normalized().dot(to_target), 1.0, 1e-12);
  // Image up points toward world +z.
  EXPECT_GT(cam.image_ray(32.0, 0.0, 0, 1).direction.normalized().z(), ray.direction.normalized().z());
}

TEST(Camera, PixelRaysGoThroughPixelCenters) {
  const Camera cam(Mat3::Identity(), Vec3::Zero(), square(4, 2.0));
  expect_vec(cam.pixel_ray(0, 0, 0, 1).direction, Vec3(-0.75, 0.75, -1.0));
  expect_vec(cam.pixel_ray(3, 3, 0, 1).direction, Vec3(0.75, -0.75, -1.0));
}

TEST(SurfacePoint, ArgmaxMidpoint) {
  const Ray ray{Vec3::Zero(), Vec3::UnitZ(), 0.0, 3.0};
  expect_vec(surface_point(ray, profile_on({0.5, 1.5, 2.5}, {0.1, 0.7, 0.2})), Vec3(0, 0, 1.5));
}

TEST(SurfacePoint, TieGoesToFirstMaximum) {
  const Ray ray{Vec3::Zero(), Vec3::UnitZ(), 0.0, 3.0};
  expect_vec(surface_point(ray, profile_on({0.5, 1.5, 2.5}, {0.4, 0.4, 0.2})), Vec3(0, 0, 0.5));
}

TEST(SurfacePoint, AllZeroWeightsFail) {
  const Ray ray{Vec3::Zero(), Vec3::UnitZ(), 0.0, 3.0};
  try {
    surface_point(ray, profile_on({0.5, 1.5, 2.5}, {0, 0, 0}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllWeightsZero);
  }
}

TEST(SurfaceSphereOrigin, PolesAndEquator) {
  expect_vec(surface_sphere_origin(Vec3::Zero(), 2.0, draw(0.0, 1.234)), Vec3(0, 0, 2));
  expect_vec(surface_sphere_origin(Vec3(1, 1, 1), 1.0, draw(kPi / 2, 0.0)), Vec3(2, 1, 1));
  expect_vec(surface_sphere_origin(Vec3::Zero(), 3.0, draw(kPi / 2, kPi / 2)), Vec3(0, 3, 0));
}

TEST(SurfaceSphereOrigin, RejectsNonPositiveRadius) {
  for (double r : {0.0, -1.0}) {
    try {
      surface_sphere_origin(Vec3::Zero(), r, draw(0, 0));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NonPositiveRadius);
    }
  }
  EXPECT_THROW(inner_sphere_origin(Vec3::Zero(), 0.0, draw(0, 0, 0.5)), Error);
}

TEST(InnerSphereOrigin, ScalesByR) {
  const SphereDraw d = draw(0.7, 2.1, 1.0);
  expect_vec(inner_sphere_origin(Vec3(1, 2, 3), 2.5, d), surface_sphere_origin(Vec3(1, 2, 3), 2.5, d));
  expect_vec(inner_sphere_origin(Vec3::Zero(), 2.0, draw(0.0, 0.0, 0.5)), Vec3(0, 0, 1));
  CounterRng rng(3, Stream::Probe);
  for (int i = 0; i < 100; ++i) {
    const SphereDraw di = draw(rng.uniform(0, kPi), rng.uniform(0, 2 * kPi), 0.25);
    EXPECT_NEAR((inner_sphere_origin(Vec3(1, -1, 0.5), 4.0, di) - Vec3(1, -1, 0.5)).norm(), 1.0, 1e-12);
  }
}

TEST(AugmentedDirection, Examples) {
  expect_vec(augmented_direction(Vec3::Zero(), Vec3(2, 0, 0), 1.0), Vec3(-1, 0, 0));
  expect_vec(augmented_direction(Vec3(1, 2, 3), Vec3(1, 2, 0), 2.0), Vec3(0, 0, 2));
  try {
    augmented_direction(Vec3(1, 1, 1), Vec3(1, 1, 1), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateDirection);
  }
}

TEST(AugmentedDirection, ReproducingTheOriginGivesTheOriginalDirection) {
  // Choose (theta, phi) so that O' lands on O; then d' must equal d.
  const Vec3 o(0.3, -1.2, 2.0), d(0.2, 0.4, -0.9);
  const Ray ray{o, d, 0.0, 5.0};
  const Vec3 ps = ray.at(2.0);
  const Vec3 u = (o - ps).normalized();
  const double theta = std::acos(u.z());
  double phi = std::atan2(u.y(), u.x());
  if (phi < 0) phi += 2 * kPi;
  const Vec3 o2 = surface_sphere_origin(ps, (o - ps).norm(), draw(theta, phi));
  expect_vec(o2, o, 1e-12);
  expect_vec(augmented_direction(ps, o2, d.norm()), d, 1e-12);
}

TEST(SphereDraws, RangesAndDeterminism) {
  for (SphereSampling mode : {SphereSampling::AngleUniform, SphereSampling::AreaUniform}) {
    for (std::uint64_t i = 0; i < 5000; ++i) {
      const SphereDraw a = sphere_draw_for(11, 3, i, mode);
      ASSERT_GE(a.theta, 0.0);
      ASSERT_LE(a.theta, kPi);
      ASSERT_GE(a.phi, 0.0);
      ASSERT_LT(a.phi, 2 * kPi);
      ASSERT_GT(a.r, 0.0);
      ASSERT_LE(a.r, 1.0);
      const SphereDraw b = sphere_draw_for(11, 3, i, mode);
      ASSERT_EQ(a.theta, b.theta);
      ASSERT_EQ(a.phi, b.phi);
      ASSERT_EQ(a.r, b.r);
    }
  }
}

TEST(SphereDraws, ModesDifferInPolarDistribution) {
  // Angle-uniform: theta uniform, so E[theta] = pi/2 and P(cos theta > 0.9) = acos(0.9)/pi.
  // Area-uniform: cos theta uniform, so P(cos theta > 0.9) = 0.05.
  const int n = 40000;
  int angle_cap = 0, area_cap = 0;
  for (int i = 0; i < n; ++i) {
    angle_cap += std::cos(sphere_draw_for(1, 0, i, SphereSampling::AngleUniform).theta) > 0.9;
    area_cap += std::cos(sphere_draw_for(1, 0, i, SphereSampling::AreaUniform).theta) > 0.9;
  }
  EXPECT_NEAR(static_cast<double>(angle_cap) / n, std::acos(0.9) / kPi, 0.006);
  EXPECT_NEAR(static_cast<double>(area_cap) / n, 0.05, 0.006);
}

TEST(AugmentedPair, UnitRadiusFractionMakesInnerEqualSurface) {
  const Ray ray{Vec3(0, 0, 4), Vec3(0.1, 0, -1), 1.0, 6.0};
  const BlendingProfile p = profile_on({1.5, 2.5, 3.5, 4.5}, {0.1, 0.2, 0.6, 0.1});
  const AugmentedPair pair = build_augmented_pair(ray, p, draw(1.1, 0.4, 1.0));
  expect_vec(pair.inner_ray.origin, pair.surface_ray.origin);
  expect_vec(pair.inner_ray.direction, pair.surface_ray.direction);
  EXPECT_EQ(pair.inner_ray.t_near, pair.surface_ray.t_near);
  EXPECT_EQ(pair.inner_ray.t_far, pair.surface_ray.t_far);
  EXPECT_FALSE(pair.mask);
  EXPECT_EQ(pair.surface_index, 2u);
}

TEST(AugmentedPair, BoundsGiveMatchingBinWidths) {
  const Ray ray{Vec3(0, 0, 4), Vec3(0.1, 0, -1), 1.0, 6.0};
  const BlendingProfile p = profile_on({1.5, 2.5, 3.5, 4.5}, {0.1, 0.2, 0.6, 0.1});
  const AugmentedPair pair = build_augmented_pair(ray, p, draw(1.1, 0.4, 0.5));
  const int n = 64;
  EXPECT_DOUBLE_EQ((pair.surface_ray.t_far - pair.surface_ray.t_near) / n, (ray.t_far - ray.t_near) / n);
  EXPECT_DOUBLE_EQ((pair.inner_ray.t_far - pair.inner_ray.t_near) / n, 0.5 * (ray.t_far - ray.t_near) / n);
  // P_s sits at the same parameter on the surface ray and at r times it on the inner ray.
  expect_vec(pair.surface_ray.at(3.5), pair.surface_point, 1e-12);
  expect_vec(pair.inner_ray.at(0.5 * 3.5), pair.surface_point, 1e-12);
}

TEST(AugmentedPair, PropertyInvariants) {
  CounterRng rng(77, Stream::Probe);
  for (int i = 0; i < 10000; ++i) {
    const Vec3 o(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
    const Vec3 d(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1) + 2.0);
    const Ray ray{o, d, 0.5, 4.0};
    std::vector<double> mids(8), w(8);
    for (int k = 0; k < 8; ++k) {
      mids[k] = 0.5 + (k + 0.5) * 3.5 / 8;
      w[k] = rng.uniform();
    }
    const AugmentedPair pair = build_augmented_pair(ray, profile_on(mids, w, 3.5 / 8), sample_sphere_draw(rng));
    const double big_r = pair.radius;
    EXPECT_NEAR((pair.surface_ray.origin - pair.surface_point).norm() / big_r, 1.0, 1e-9);
    EXPECT_NEAR((pair.inner_ray.origin - pair.surface_point).norm() / (pair.draw.r * big_r), 1.0, 1e-9);
    EXPECT_NEAR(pair.surface_ray.direction.norm() / d.norm(), 1.0, 1e-9);
    EXPECT_LT(pair.surface_ray.direction.cross(pair.inner_ray.direction).norm(), 1e-9);
    EXPECT_GT(pair.surface_ray.direction.dot(pair.inner_ray.direction), 0.0);
  }
}
