#pragma once

#include "divcon/consistency.hpp"
#include "divcon/geometry.hpp"
#include "divcon/renderer.hpp"
#include "divcon/scenes.hpp"

#include <sstream>
#include <string>
#include <vector>

namespace divcon {

// Compares the consistency mask with exact geometric visibility. Original
// rays come from random rig poses and pixels of an analytic scene rendered
// through the density bypass; each gets one surface-sphere ray. The oracle
// calls an augmented ray consistent when P_s is visible from the start of
// its sampled segment, ignoring crossings less than (epsilon + 1) bins before
// P_s. The augmented grid places P_s exactly on sample s and the argmax lands
// on the first sample past a crossing, so for an infinitely sharp density the
// rule |s - s'| <= epsilon accepts exactly those rays.

struct MaskAuditConfig {
  std::string preset = "occluder";
  int rays = 10000;
  double sharpness = 500.0;
  int samples = 64;
  int epsilon = 2;
  std::uint64_t seed = 0;
  SphereSampling sampling = SphereSampling::AngleUniform;
  /// Original rays whose total weight falls below this are redrawn.
  double min_weight_sum = 0.5;
};

struct AuditRecord {
  std::uint64_t ray_id = 0;
  std::size_t s = 0;
  std::size_t s_prime = 0;
  bool mask = false;        // argmax verdict
  bool depth_mask = false;  // rendered-depth verdict at the same tolerance
  bool oracle = false;
};

struct VerdictStats {
  double agreement = 0.0;  // verdicts equal to the oracle's
  double precision = 0.0;  // oracle-consistent share of accepted rays
  double accept_rate = 0.0;
  std::size_t accepted = 0;
};

struct MaskAuditSummary {
  std::size_t rays = 0;
  std::size_t redraws = 0;
  double oracle_consistent = 0.0;
  VerdictStats argmax;
  VerdictStats depth;
};

struct MaskAuditResult {
  std::vector<AuditRecord> records;
  MaskAuditSummary summary;
};

inline VerdictStats verdict_stats(const std::vector<AuditRecord>& recs, bool AuditRecord::*verdict) {
  VerdictStats v;
  if (recs.empty()) return v;
  std::size_t agree = 0, true_accept = 0;
  for (const AuditRecord& r : recs) {
    agree += (r.*verdict == r.oracle) ? 1 : 0;
    if (r.*verdict) {
      ++v.accepted;
      true_accept += r.oracle ? 1 : 0;
    }
  }
  v.agreement = static_cast<double>(agree) / recs.size();
  v.precision = v.accepted ? static_cast<double>(true_accept) / v.accepted : 1.0;
  v.accept_rate = static_cast<double>(v.accepted) / recs.size();
  return v;
}

inline MaskAuditResult run_mask_audit(const MaskAuditConfig& cfg) {
  if (cfg.rays < 1) fail(ErrorCode::InvalidArgument, "audit needs at least one ray");
  const ScenePreset preset = scene_preset(cfg.preset);
  const DensityBypass field(preset.scene, cfg.sharpness);
  const Vec3 bg = background_color(preset.scene.background);
  const CameraRig& rig = preset.rig;
  MaskConfig argmax_cfg;
  argmax_cfg.epsilon = cfg.epsilon;
  MaskConfig depth_cfg = argmax_cfg;
  depth_cfg.source = MaskSource::RenderedDepth;

  MaskAuditResult res;
  res.records.reserve(static_cast<std::size_t>(cfg.rays));
  std::uint64_t attempt = 0;
  const std::uint64_t max_attempts = static_cast<std::uint64_t>(cfg.rays) * 1000;
  while (res.records.size() < static_cast<std::size_t>(cfg.rays)) {
    if (attempt >= max_attempts) fail(ErrorCode::InvalidArgument, "too few rays hit the scene");
    CounterRng rng(cfg.seed, Stream::Audit, attempt++);
    const double az = rig.azimuth_center + (rng.uniform() - 0.5) * std::min(rig.azimuth_span, 2.0 * kPi);
    const double el = rig.elevation_min + rng.uniform() * (rig.elevation_max - rig.elevation_min);
    const Camera cam = rig.camera_at(az, el);
    const Ray ray = cam.image_ray(rng.uniform() * cam.width(), rng.uniform() * cam.height(), preset.t_near, preset.t_far);
    const BlendingProfile orig = render_ray(field, ray, cfg.samples, false, nullptr, bg);
    if (orig.weight_sum() < cfg.min_weight_sum) {
      ++res.summary.redraws;
      continue;
    }
    const std::uint64_t id = res.records.size();
    CounterRng draw_rng(cfg.seed, Stream::SphereDraw, 0, id);
    AugmentedPair pair;
    try {
      pair = build_augmented_pair(ray, orig, sample_sphere_draw(draw_rng, cfg.sampling));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DegenerateDirection && e.code() != ErrorCode::NonPositiveRadius) throw;
      ++res.summary.redraws;
      continue;
    }
    const BlendingProfile aug = render_ray(field, pair.surface_ray, cfg.samples, false, nullptr, bg);

    AuditRecord rec;
    rec.ray_id = id;
    rec.s = orig.argmax_index;
    rec.s_prime = aug.argmax_index;
    rec.mask = consistency_mask(orig, aug, argmax_cfg);
    rec.depth_mask = consistency_mask(orig, aug, depth_cfg);
    const double delta = orig.grid.deltas.front();
    const double tol = (cfg.epsilon + 1) * delta * pair.surface_ray.direction.norm();
    rec.oracle = occlusion_oracle(preset.scene, pair.surface_ray.at(pair.surface_ray.t_near), pair.surface_point, tol);
    res.records.push_back(rec);
  }

  MaskAuditSummary& s = res.summary;
  s.rays = res.records.size();
  std::size_t consistent = 0;
  for (const AuditRecord& r : res.records) consistent += r.oracle ? 1 : 0;
  s.oracle_consistent = static_cast<double>(consistent) / s.rays;
  s.argmax = verdict_stats(res.records, &AuditRecord::mask);
  s.depth = verdict_stats(res.records, &AuditRecord::depth_mask);
  return res;
}

/// One row per ray: ray_id,s,s_prime,mask,oracle with verdicts as 0/1.
inline std::string audit_csv(const std::vector<AuditRecord>& records) {
  std::ostringstream out;
  out << "ray_id,s,s_prime,mask,oracle\n";
  for (const AuditRecord& r : records)
    out << r.ray_id << ',' << r.s << ',' << r.s_prime << ',' << (r.mask ? 1 : 0) << ',' << (r.oracle ? 1 : 0) << '\n';
  return out.str();
}

}  // namespace divcon
