#pragma once

#include "divcon/core.hpp"
#include "divcon/profile.hpp"
#include "divcon/rng.hpp"

#include <cstdint>
#include <string>

namespace divcon {

/// r(t) = origin + t * direction, sampled over [t_near, t_far]. The direction
/// is deliberately not normalized: its magnitude sets the world length of one
/// unit of t.
struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();
  double t_near = 0.0;
  double t_far = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

inline void validate(const Ray& ray) {
  if (!(ray.direction.norm() > 0.0)) fail(ErrorCode::DegenerateDirection, "ray direction has zero length");
  if (!(ray.t_near >= 0.0) || !(ray.t_far > ray.t_near))
    fail(ErrorCode::InvalidArgument, "ray bounds must satisfy 0 <= t_near < t_far");
}

struct Intrinsics {
  double focal = 1.0;  // pixels
  double cx = 0.0;     // pixels
  double cy = 0.0;     // pixels
  int width = 1;
  int height = 1;
};

/// Pinhole camera with a camera-to-world pose. Camera space looks down -z with
/// +y up and +x right, the usual radiance-field convention.
class Camera {
 public:
  Camera() = default;

  Camera(const Mat3& rotation, const Vec3& center, const Intrinsics& intrinsics)
      : rotation_(rotation), center_(center), intrinsics_(intrinsics) {
    const double ortho_err = (rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!(ortho_err <= 1e-9) || !(std::abs(rotation.determinant() - 1.0) <= 1e-9))
      fail(ErrorCode::InvalidArgument, "camera rotation is not a proper rotation");
    if (!(intrinsics.focal > 0.0) || intrinsics.width < 1 || intrinsics.height < 1)
      fail(ErrorCode::InvalidArgument, "camera intrinsics must be positive");
  }

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, const Intrinsics& intrinsics) {
    const Vec3 back = (eye - target).normalized();
    Vec3 right = up.cross(back);
    if (right.norm() < 1e-12) right = Vec3::UnitX().cross(back);
    right.normalize();
    const Vec3 true_up = back.cross(right);
    Mat3 r;
    r.col(0) = right;
    r.col(1) = true_up;
    r.col(2) = back;
    return Camera(r, eye, intrinsics);
  }

  const Mat3& rotation() const { return rotation_; }
  const Vec3& center() const { return center_; }
  const Intrinsics& intrinsics() const { return intrinsics_; }
  int width() const { return intrinsics_.width; }
  int height() const { return intrinsics_.height; }

  /// Ray through the center of pixel (px, py); py grows downward.
  Ray pixel_ray(int px, int py, double t_near, double t_far) const {
    return image_ray(px + 0.5, py + 0.5, t_near, t_far);
  }

  Ray image_ray(double u, double v, double t_near, double t_far) const {
    const Vec3 d_cam((u - intrinsics_.cx) / intrinsics_.focal, -(v - intrinsics_.cy) / intrinsics_.focal, -1.0);
    return Ray{center_, rotation_ * d_cam, t_near, t_far};
  }

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 center_ = Vec3::Zero();
  Intrinsics intrinsics_{};
};

/// Spherical coordinates shared by the surface- and inner-sphere rays of one
/// original ray: polar angle theta, azimuth phi and radius fraction r.
struct SphereDraw {
  double theta = 0.0;
  double phi = 0.0;
  double r = 1.0;

  Vec3 unit() const {
    return Vec3(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
  }
};

enum class SphereSampling {
  AngleUniform,  // theta ~ U[0, pi], phi ~ U[0, 2pi)
  AreaUniform,   // cos(theta) ~ U[-1, 1], phi ~ U[0, 2pi)
};

inline SphereDraw sample_sphere_draw(CounterRng& rng, SphereSampling mode = SphereSampling::AngleUniform) {
  SphereDraw draw;
  const double u = rng.uniform();
  draw.theta = mode == SphereSampling::AngleUniform ? u * kPi : std::acos(std::clamp(1.0 - 2.0 * u, -1.0, 1.0));
  draw.phi = rng.uniform() * 2.0 * kPi;
  draw.r = 1.0 - rng.uniform();  // (0, 1]
  return draw;
}

inline SphereDraw sphere_draw_for(std::uint64_t seed, std::uint64_t iteration, std::uint64_t ray_id,
                                  SphereSampling mode = SphereSampling::AngleUniform) {
  CounterRng rng(seed, Stream::SphereDraw, iteration, ray_id);
  return sample_sphere_draw(rng, mode);
}

/// P_s = O + t_s d at the first maximum of the blending weights. The result
/// is a plain value: nothing downstream differentiates through it.
inline Vec3 surface_point(const Ray& ray, const BlendingProfile& profile) {
  if (profile.weights.empty() || profile.grid.size() != profile.weights.size())
    fail(ErrorCode::ShapeMismatch, "profile does not match its grid");
  bool any = false;
  for (double w : profile.weights) any = any || w > 0.0;
  if (!any) fail(ErrorCode::AllWeightsZero, "no blending weight is positive");
  const std::size_t s = first_argmax(profile.weights);
  return ray.at(profile.grid.midpoints[s]);
}

inline Vec3 surface_sphere_origin(const Vec3& surface_point, double radius, const SphereDraw& draw) {
  if (!(radius > 0.0)) fail(ErrorCode::NonPositiveRadius, "sphere radius must be positive");
  return surface_point + radius * draw.unit();
}

inline Vec3 inner_sphere_origin(const Vec3& surface_point, double radius, const SphereDraw& draw) {
  if (!(radius > 0.0)) fail(ErrorCode::NonPositiveRadius, "sphere radius must be positive");
  if (!(draw.r > 0.0 && draw.r <= 1.0)) fail(ErrorCode::InvalidArgument, "radius fraction must lie in (0, 1]");
  return surface_point + (draw.r * radius) * draw.unit();
}

/// Direction from new_origin toward surface_point, rescaled to `magnitude`.
inline Vec3 augmented_direction(const Vec3& surface_point, const Vec3& new_origin, double magnitude) {
  const Vec3 toward = surface_point - new_origin;
  const double len = toward.norm();
  if (!(len >= 1e-12)) fail(ErrorCode::DegenerateDirection, "augmented origin coincides with the surface point");
  if (!(magnitude > 0.0)) fail(ErrorCode::InvalidArgument, "direction magnitude must be positive");
  return (magnitude / len) * toward;
}

struct AugmentedPair {
  Ray original;
  Ray surface_ray;
  Ray inner_ray;
  SphereDraw draw;
  Vec3 surface_point = Vec3::Zero();
  std::size_t surface_index = 0;  // s, the argmax index on the original ray
  double radius = 0.0;
  bool mask = false;
};

/// Both augmented rays aim at P_s along the same direction. The surface ray
/// keeps the original bounds so its bins have the same width and P_s lands on
/// the same index; the inner ray's bounds shrink by r for the same reason.
inline AugmentedPair build_augmented_pair(const Ray& ray, const BlendingProfile& profile, const SphereDraw& draw) {
  AugmentedPair pair;
  pair.original = ray;
  pair.draw = draw;
  pair.surface_point = surface_point(ray, profile);
  pair.surface_index = first_argmax(profile.weights);
  pair.radius = (ray.origin - pair.surface_point).norm();

  const double magnitude = ray.direction.norm();
  const Vec3 o_surface = surface_sphere_origin(pair.surface_point, pair.radius, draw);
  const Vec3 o_inner = inner_sphere_origin(pair.surface_point, pair.radius, draw);
  const Vec3 d_surface = augmented_direction(pair.surface_point, o_surface, magnitude);

  pair.surface_ray = Ray{o_surface, d_surface, ray.t_near, ray.t_far};
  pair.inner_ray = Ray{o_inner, d_surface, draw.r * ray.t_near, draw.r * ray.t_far};
  pair.mask = false;
  return pair;
}

}  // namespace divcon
