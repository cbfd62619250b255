#pragma once

#include "divcon/core.hpp"
#include "divcon/geometry.hpp"
#include "divcon/image.hpp"
#include "divcon/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace divcon {

struct SpherePrim {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

struct BoxPrim {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Ones();
};

/// Solid half-space below the plane (opposite the normal).
struct PlanePrim {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

using Shape = std::variant<SpherePrim, BoxPrim, PlanePrim>;

struct Primitive {
  Shape shape;
  Vec3 albedo = Vec3::Constant(0.8);
  double specular = 0.0;
};

enum class Background { Black, White };

inline Vec3 background_color(Background b) { return b == Background::White ? Vec3::Ones() : Vec3::Zero(); }

struct SyntheticScene {
  std::string name;
  std::vector<Primitive> primitives;
  Background background = Background::Black;
  Vec3 light_dir = Vec3(0.35, 0.25, 0.9).normalized();
  double ambient = 0.25;
  double shininess = 24.0;

  void validate() const {
    if (primitives.empty()) fail(ErrorCode::InvalidArgument, "scene has no primitives");
    for (const auto& p : primitives) {
      if (const auto* s = std::get_if<SpherePrim>(&p.shape); s && !(s->radius > 0.0))
        fail(ErrorCode::InvalidArgument, "sphere radius must be positive");
      if (const auto* b = std::get_if<BoxPrim>(&p.shape); b && !(b->half_extents.minCoeff() > 0.0))
        fail(ErrorCode::InvalidArgument, "box extents must be positive");
      if (const auto* pl = std::get_if<PlanePrim>(&p.shape); pl && !(pl->normal.norm() > 0.0))
        fail(ErrorCode::InvalidArgument, "plane normal must be nonzero");
    }
  }
};

inline double primitive_sdf(const Shape& shape, const Vec3& x) {
  return std::visit(
      [&x](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrim>) {
          return (x - s.center).norm() - s.radius;
        } else if constexpr (std::is_same_v<T, BoxPrim>) {
          const Vec3 q = (x - s.center).cwiseAbs() - s.half_extents;
          return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
        } else {
          return (x - s.point).dot(s.normal.normalized());
        }
      },
      shape);
}

inline Vec3 primitive_normal(const Shape& shape, const Vec3& x) {
  return std::visit(
      [&x](const auto& s) -> Vec3 {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SpherePrim>) {
          const Vec3 d = x - s.center;
          return d.norm() > 0.0 ? Vec3(d.normalized()) : Vec3(Vec3::UnitZ());
        } else if constexpr (std::is_same_v<T, BoxPrim>) {
          const Vec3 q = (x - s.center).cwiseQuotient(s.half_extents);
          Eigen::Index axis = 0;
          q.cwiseAbs().maxCoeff(&axis);
          Vec3 n = Vec3::Zero();
          n[axis] = q[axis] >= 0.0 ? 1.0 : -1.0;
          return n;
        } else {
          return s.normal.normalized();
        }
      },
      shape);
}

/// Union SDF: minimum over primitives, negative inside.
inline double sdf_eval(const SyntheticScene& scene, const Vec3& x, std::size_t* nearest = nullptr) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
    const double d = primitive_sdf(scene.primitives[i].shape, x);
    if (d < best) {
      best = d;
      if (nearest) *nearest = i;
    }
  }
  return best;
}

/// Lambert plus a Phong lobe toward the fixed light. `view` points from the
/// eye toward the surface.
inline Vec3 shade(const SyntheticScene& scene, const Primitive& prim, const Vec3& x, const Vec3& view) {
  const Vec3 n = primitive_normal(prim.shape, x);
  const double lambert = std::max(0.0, n.dot(scene.light_dir));
  Vec3 c = prim.albedo * (scene.ambient + (1.0 - scene.ambient) * lambert);
  if (prim.specular > 0.0) {
    const Vec3 reflected = 2.0 * n.dot(scene.light_dir) * n - scene.light_dir;
    const double rv = std::max(0.0, reflected.dot(-view.normalized()));
    c += Vec3::Constant(prim.specular * std::pow(rv, scene.shininess));
  }
  return c.cwiseMax(0.0).cwiseMin(1.0);
}

/// Distance along the unit direction to the first sign change of the SDF in
/// [0, t_max], or nullopt. Steps are max(sdf, min_step); a step that lands
/// inside is refined by bisection.
inline std::optional<double> first_crossing(const SyntheticScene& scene, const Vec3& origin, const Vec3& unit_dir,
                                            double t_max, double min_step) {
  double t = 0.0;
  double d = sdf_eval(scene, origin);
  if (d <= 0.0) return 0.0;
  for (int iter = 0; iter < 100000 && t <= t_max; ++iter) {
    if (d < 1e-12) return t;
    const double t_next = t + std::max(d, min_step);
    const double d_next = sdf_eval(scene, origin + t_next * unit_dir);
    if (d_next <= 0.0) {
      double lo = t, hi = t_next;
      for (int b = 0; b < 60; ++b) {
        const double mid = 0.5 * (lo + hi);
        (sdf_eval(scene, origin + mid * unit_dir) > 0.0 ? lo : hi) = mid;
      }
      return hi <= t_max ? std::optional<double>(hi) : std::nullopt;
    }
    t = t_next;
    d = d_next;
  }
  return std::nullopt;
}

struct GroundTruthView {
  Image rgb;
  Image depth;  // t units of the pixel ray; 0 where nothing is hit
};

inline GroundTruthView ground_truth_render(const SyntheticScene& scene, const Camera& camera, double t_far = 1e3) {
  scene.validate();
  const int w = camera.width(), h = camera.height();
  GroundTruthView v{Image(w, h, 3), Image(w, h, 1)};
  const Vec3 bg = background_color(scene.background);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Ray ray = camera.pixel_ray(x, y, 0.0, t_far);
      const double len = ray.direction.norm();
      const Vec3 unit = ray.direction / len;
      const auto hit = first_crossing(scene, ray.origin, unit, t_far * len, 1e-4);
      if (!hit) {
        v.rgb.set_rgb(x, y, bg);
        continue;
      }
      const Vec3 p = ray.origin + *hit * unit;
      std::size_t idx = 0;
      sdf_eval(scene, p, &idx);
      v.rgb.set_rgb(x, y, shade(scene, scene.primitives[idx], p, unit));
      v.depth.at(x, y) = *hit / len;
    }
  return v;
}

/// True iff the segment origin -> target crosses no surface before reaching
/// within `tol` of the target.
inline bool occlusion_oracle(const SyntheticScene& scene, const Vec3& origin, const Vec3& target, double tol) {
  const Vec3 seg = target - origin;
  const double dist = seg.norm();
  if (!(dist > 1e-12)) fail(ErrorCode::DegenerateDirection, "origin coincides with target");
  if (!(tol > 0.0)) fail(ErrorCode::InvalidArgument, "oracle tolerance must be positive");
  const double reach = dist - tol;
  if (reach <= 0.0) return true;
  const auto hit = first_crossing(scene, origin, seg / dist, reach, tol / 4.0);
  return !hit.has_value() || *hit >= reach;
}

/// Samples from the analytic density sigma(x) = k * sigmoid(-k * sdf(x)).
struct BypassSamples {
  Eigen::VectorXd sigma;
  Eigen::Matrix3Xd color;
};

/// Parameter-free stand-in for the learned field, exact up to the sigmoid
/// smoothing of the surface. Colors use the same shading as the ground-truth
/// renderer (or flat albedo when `shaded` is false).
struct DensityBypass {
  const SyntheticScene* scene = nullptr;
  double sharpness = 500.0;
  bool shaded = true;

  DensityBypass(const SyntheticScene& s, double k, bool shade_colors = true)
      : scene(&s), sharpness(k), shaded(shade_colors) {
    if (!(k > 0.0)) fail(ErrorCode::InvalidArgument, "bypass sharpness must be positive");
  }

  BypassSamples forward(const Eigen::Matrix3Xd& points, const Eigen::Matrix3Xd& dirs) const {
    BypassSamples out{Eigen::VectorXd(points.cols()), Eigen::Matrix3Xd(3, points.cols())};
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
      std::size_t idx = 0;
      const Vec3 x = points.col(i);
      const double d = sdf_eval(*scene, x, &idx);
      const double z = -d * sharpness;
      const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      out.sigma[i] = sharpness * s;
      const Primitive& prim = scene->primitives[idx];
      out.color.col(i) = shaded ? shade(*scene, prim, x, dirs.col(i)) : prim.albedo;
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Camera rigs, presets and datasets.
// ---------------------------------------------------------------------------

enum class RigKind {
  Ring,    // evenly spaced azimuths over the span, elevations stratified
  Sphere,  // area-uniform over the elevation band and azimuth span
};

struct CameraRig {
  RigKind kind = RigKind::Ring;
  Vec3 target = Vec3::Zero();
  double radius = 4.0;
  double elevation_min = 20.0 * kPi / 180.0;
  double elevation_max = 50.0 * kPi / 180.0;
  double azimuth_center = 0.0;
  double azimuth_span = 2.0 * kPi;  // full circle when >= 2 pi
  double fov = 40.0 * kPi / 180.0;  // horizontal
  int width = 64;
  int height = 64;

  Intrinsics intrinsics() const {
    Intrinsics k;
    k.width = width;
    k.height = height;
    k.focal = 0.5 * width / std::tan(0.5 * fov);
    k.cx = 0.5 * width;
    k.cy = 0.5 * height;
    return k;
  }

  Camera camera_at(double azimuth, double elevation) const {
    const Vec3 dir(std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
                   std::sin(elevation));
    return Camera::look_at(target + radius * dir, target, Vec3::UnitZ(), intrinsics());
  }
};

struct ScenePreset {
  SyntheticScene scene;
  CameraRig rig;
  double t_near = 2.0;
  double t_far = 6.0;
};

inline ScenePreset three_spheres_preset() {
  ScenePreset p;
  p.scene.name = "three-spheres";
  p.scene.background = Background::White;
  p.scene.primitives = {
      {SpherePrim{Vec3(-0.65, -0.1, 0.0), 0.45}, Vec3(0.85, 0.22, 0.18), 0.0},
      {SpherePrim{Vec3(0.55, 0.45, 0.05), 0.40}, Vec3(0.2, 0.75, 0.3), 0.35},
      {SpherePrim{Vec3(0.15, -0.55, -0.05), 0.50}, Vec3(0.22, 0.35, 0.9), 0.0},
  };
  p.rig.kind = RigKind::Ring;
  p.rig.radius = 4.0;
  p.rig.elevation_min = 15.0 * kPi / 180.0;
  p.rig.elevation_max = 45.0 * kPi / 180.0;
  p.t_near = 2.0;
  p.t_far = 6.0;
  return p;
}

/// A sphere resting on a floor behind a wall with a square aperture.
inline ScenePreset occluder_preset() {
  ScenePreset p;
  p.scene.name = "occluder";
  p.scene.background = Background::Black;
  const double wall_y = 1.4, thick = 0.15, extent = 1.6, hole = 0.45;
  const Vec3 wall_albedo(0.7, 0.7, 0.65);
  auto slab = [&](double x0, double x1, double z0, double z1) {
    return Primitive{BoxPrim{Vec3(0.5 * (x0 + x1), wall_y, 0.5 * (z0 + z1)),
                             Vec3(0.5 * (x1 - x0), thick, 0.5 * (z1 - z0))},
                     wall_albedo, 0.0};
  };
  p.scene.primitives = {
      {SpherePrim{Vec3::Zero(), 0.6}, Vec3(0.9, 0.55, 0.15), 0.3},
      {PlanePrim{Vec3(0.0, 0.0, -0.6), Vec3::UnitZ()}, Vec3(0.45, 0.5, 0.55), 0.0},
      slab(-extent, -hole, -0.6, extent),
      slab(hole, extent, -0.6, extent),
      slab(-hole, hole, hole, extent),
      slab(-hole, hole, -0.6, -hole),
  };
  p.rig.kind = RigKind::Ring;
  p.rig.radius = 4.5;
  p.rig.azimuth_center = 0.5 * kPi;  // +y side, in front of the wall
  p.rig.azimuth_span = 70.0 * kPi / 180.0;
  p.rig.elevation_min = 5.0 * kPi / 180.0;
  p.rig.elevation_max = 30.0 * kPi / 180.0;
  p.rig.fov = 45.0 * kPi / 180.0;
  p.t_near = 1.0;
  p.t_far = 8.0;
  return p;
}

inline ScenePreset scene_preset(const std::string& name) {
  if (name == "three-spheres") return three_spheres_preset();
  if (name == "occluder") return occluder_preset();
  fail(ErrorCode::BadConfig, "unknown scene preset '" + name + "'");
}

enum class Split { Train, Heldout };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "heldout"; }

struct DatasetBundle {
  std::vector<Image> images;
  std::vector<Camera> cameras;
  std::vector<Split> splits;
  double t_near = 2.0;
  double t_far = 6.0;
  Background background = Background::Black;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < splits.size(); ++i)
      if (splits[i] == s) out.push_back(i);
    return out;
  }
};

/// Camera poses for n views. Ring rigs interleave: train views sit on the
/// even slots of a 2m-slot ring and held-out views on the odd ones, so the
/// two sets never share a pose. m defaults to n; pass the larger split size
/// when the splits differ in size.
inline std::vector<Camera> rig_cameras(const CameraRig& rig, int n, std::uint64_t seed, bool heldout, int m = 0) {
  std::vector<Camera> cams;
  const bool full_circle = rig.azimuth_span >= 2.0 * kPi - 1e-12;
  if (rig.kind == RigKind::Ring) {
    CounterRng rng(seed, Stream::Camera, 0);  // shared so both splits use one ring
    const double phase = rng.uniform() * 0.25;
    const int slots = 2 * std::max(n, m);
    for (int k = 0; k < n; ++k) {
      const int slot = 2 * k + (heldout ? 1 : 0);
      const double frac = full_circle ? (slot + phase) / slots : (slot + 0.5) / slots;
      const double az = rig.azimuth_center + (frac - (full_circle ? 0.0 : 0.5)) * rig.azimuth_span;
      const double el_frac = n == 1 ? 0.5 : (k % 2 == 0 ? 0.25 : 0.75);
      const double el = rig.elevation_min + el_frac * (rig.elevation_max - rig.elevation_min);
      cams.push_back(rig.camera_at(az, el));
    }
  } else {
    CounterRng rng(seed, Stream::Camera, 1, heldout ? 1 : 0);
    const double z0 = std::sin(rig.elevation_min), z1 = std::sin(rig.elevation_max);
    for (int k = 0; k < n; ++k) {
      const double el = std::asin(z0 + (z1 - z0) * rng.uniform());
      const double az = rig.azimuth_center + (rng.uniform() - 0.5) * rig.azimuth_span;
      cams.push_back(rig.camera_at(az, el));
    }
  }
  return cams;
}

inline DatasetBundle make_dataset(const ScenePreset& preset, int n_train, int n_heldout, std::uint64_t seed) {
  if (n_train < 1 || n_heldout < 0) fail(ErrorCode::InvalidArgument, "need at least one training view");
  DatasetBundle data;
  data.t_near = preset.t_near;
  data.t_far = preset.t_far;
  data.background = preset.scene.background;
  auto add = [&](const std::vector<Camera>& cams, Split split) {
    for (const Camera& cam : cams) {
      data.images.push_back(ground_truth_render(preset.scene, cam).rgb);
      data.cameras.push_back(cam);
      data.splits.push_back(split);
    }
  };
  const int m = std::max(n_train, n_heldout);
  add(rig_cameras(preset.rig, n_train, seed, false, m), Split::Train);
  add(rig_cameras(preset.rig, n_heldout, seed, true, m), Split::Heldout);
  return data;
}

}  // namespace divcon
