#pragma once

#include "divcon/dataset_io.hpp"
#include "divcon/trainer.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

namespace divcon {

// Training configuration files hold one `key = value` pair per line. Blank
// lines and text after `#` are ignored. Keys mirror TrainConfig; nested
// settings use the prefixes mask., loss., field. and data.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(x)) fail(ErrorCode::BadConfig, key + ": expected a number, got '" + v + "'");
  return x;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0') fail(ErrorCode::BadConfig, key + ": expected an integer, got '" + v + "'");
  return x;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || v.front() == '-')
    fail(ErrorCode::BadConfig, key + ": expected a non-negative integer, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::BadConfig, key + ": expected true or false, got '" + v + "'");
}

using Setter = std::function<void(TrainConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& config_setters() {
  auto i32 = [](int TrainConfig::*f) -> Setter {
    return [f](TrainConfig& c, const std::string& k, const std::string& v) { c.*f = static_cast<int>(parse_int(k, v)); };
  };
  auto f64 = [](double TrainConfig::*f) -> Setter {
    return [f](TrainConfig& c, const std::string& k, const std::string& v) { c.*f = parse_double(k, v); };
  };
  auto loss_f64 = [](double LossConfig::*f) -> Setter {
    return [f](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.*f = parse_double(k, v); };
  };
  auto field_i32 = [](int FieldArchitecture::*f) -> Setter {
    return [f](TrainConfig& c, const std::string& k, const std::string& v) {
      c.arch.*f = static_cast<int>(parse_int(k, v));
    };
  };
  static const std::map<std::string, Setter> table{
      {"iterations", i32(&TrainConfig::iterations)},
      {"batch_rays", i32(&TrainConfig::batch_rays)},
      {"learning_rate", f64(&TrainConfig::learning_rate)},
      {"lr_final_factor", f64(&TrainConfig::lr_final_factor)},
      {"beta1", f64(&TrainConfig::beta1)},
      {"beta2", f64(&TrainConfig::beta2)},
      {"adam_epsilon", f64(&TrainConfig::adam_epsilon)},
      {"seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); }},
      {"samples", i32(&TrainConfig::samples)},
      {"jitter", [](TrainConfig& c, const std::string& k, const std::string& v) { c.jitter = parse_bool(k, v); }},
      {"augment_multiplier", i32(&TrainConfig::augment_multiplier)},
      {"sphere_sampling",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "angle") c.sphere_sampling = SphereSampling::AngleUniform;
         else if (v == "area") c.sphere_sampling = SphereSampling::AreaUniform;
         else fail(ErrorCode::BadConfig, k + ": expected angle or area");
       }},
      {"threads", i32(&TrainConfig::threads)},
      {"checkpoint_every", i32(&TrainConfig::checkpoint_every)},
      {"eval_every", i32(&TrainConfig::eval_every)},
      {"log_every", i32(&TrainConfig::log_every)},
      {"mask.epsilon",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.mask.epsilon = static_cast<int>(parse_int(k, v)); }},
      {"mask.source",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "argmax") c.mask.source = MaskSource::Argmax;
         else if (v == "depth") c.mask.source = MaskSource::RenderedDepth;
         else fail(ErrorCode::BadConfig, k + ": expected argmax or depth");
       }},
      {"mask.clip", [](TrainConfig& c, const std::string& k, const std::string& v) { c.mask.clip.enabled = parse_bool(k, v); }},
      {"mask.clip_angle_deg",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         c.mask.clip.angle_threshold = parse_double(k, v) * kPi / 180.0;
       }},
      {"loss.temperature", loss_f64(&LossConfig::temperature)},
      {"loss.lambda_rc", loss_f64(&LossConfig::lambda_rc)},
      {"loss.lambda_pbf", loss_f64(&LossConfig::lambda_pbf)},
      {"loss.lambda_mnll", loss_f64(&LossConfig::lambda_mnll)},
      {"loss.lambda_nll", loss_f64(&LossConfig::lambda_nll)},
      {"loss.lambda_ue", loss_f64(&LossConfig::lambda_ue)},
      {"loss.laplace_scale", loss_f64(&LossConfig::laplace_scale)},
      {"loss.ue_halfwidth",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.ue_halfwidth = static_cast<int>(parse_int(k, v)); }},
      {"loss.warmup_iters",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.warmup_iters = static_cast<int>(parse_int(k, v)); }},
      {"loss.two_sided_rc",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.two_sided_rc = parse_bool(k, v); }},
      {"loss.mnll_center",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "per-sample") c.loss.mnll_center = MnllCenter::PerSample;
         else if (v == "ray-color") c.loss.mnll_center = MnllCenter::RayColor;
         else fail(ErrorCode::BadConfig, k + ": expected per-sample or ray-color");
       }},
      {"loss.pairing",
       [](TrainConfig& c, const std::string& k, const std::string& v) {
         if (v == "matched") c.loss.pairing = FeaturePairing::Matched;
         else if (v == "reversed") c.loss.pairing = FeaturePairing::Reversed;
         else fail(ErrorCode::BadConfig, k + ": expected matched or reversed");
       }},
      {"loss.nll_background",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.loss.nll_background_component = parse_bool(k, v); }},
      {"field.pos_levels", field_i32(&FieldArchitecture::pos_levels)},
      {"field.dir_levels", field_i32(&FieldArchitecture::dir_levels)},
      {"field.hidden_layers", field_i32(&FieldArchitecture::hidden_layers)},
      {"field.hidden_width", field_i32(&FieldArchitecture::hidden_width)},
      {"field.color_width", field_i32(&FieldArchitecture::color_width)},
      {"field.position_scale",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.arch.position_scale = parse_double(k, v); }},
      {"field.density_bias_init",
       [](TrainConfig& c, const std::string& k, const std::string& v) { c.arch.density_bias_init = parse_double(k, v); }},
      {"data.dir", [](TrainConfig& c, const std::string&, const std::string& v) { c.dataset_dir = v; }},
      {"data.preset", [](TrainConfig& c, const std::string&, const std::string& v) { c.preset = v; }},
      {"data.width", i32(&TrainConfig::width)},
      {"data.height", i32(&TrainConfig::height)},
      {"data.n_train", i32(&TrainConfig::n_train)},
      {"data.n_heldout", i32(&TrainConfig::n_heldout)},
      {"data.seed", [](TrainConfig& c, const std::string& k, const std::string& v) { c.scene_seed = parse_u64(k, v); }},
  };
  return table;
}

}  // namespace detail

/// Applies one key to a config; unknown keys are an error.
inline void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::config_setters();
  const auto it = table.find(key);
  if (it == table.end()) fail(ErrorCode::BadConfig, "unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

inline TrainConfig parse_train_config(const std::string& text, TrainConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::BadConfig, "line " + std::to_string(lineno) + ": expected key = value");
    apply_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(ErrorCode::Io, "cannot open config " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_train_config(ss.str());
}

inline std::string format_config(const TrainConfig& c) {
  std::ostringstream o;
  o.precision(17);
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "iterations = " << c.iterations << "\nbatch_rays = " << c.batch_rays << "\nlearning_rate = " << c.learning_rate
    << "\nlr_final_factor = " << c.lr_final_factor << "\nbeta1 = " << c.beta1 << "\nbeta2 = " << c.beta2
    << "\nadam_epsilon = " << c.adam_epsilon << "\nseed = " << c.seed << "\nsamples = " << c.samples
    << "\njitter = " << b(c.jitter) << "\naugment_multiplier = " << c.augment_multiplier
    << "\nsphere_sampling = " << (c.sphere_sampling == SphereSampling::AngleUniform ? "angle" : "area")
    << "\nthreads = " << c.threads << "\ncheckpoint_every = " << c.checkpoint_every
    << "\neval_every = " << c.eval_every << "\nlog_every = " << c.log_every << "\nmask.epsilon = " << c.mask.epsilon
    << "\nmask.source = " << (c.mask.source == MaskSource::Argmax ? "argmax" : "depth")
    << "\nmask.clip = " << b(c.mask.clip.enabled) << "\nmask.clip_angle_deg = " << c.mask.clip.angle_threshold * 180.0 / kPi
    << "\nloss.temperature = " << c.loss.temperature << "\nloss.lambda_rc = " << c.loss.lambda_rc
    << "\nloss.lambda_pbf = " << c.loss.lambda_pbf << "\nloss.lambda_mnll = " << c.loss.lambda_mnll
    << "\nloss.lambda_nll = " << c.loss.lambda_nll << "\nloss.lambda_ue = " << c.loss.lambda_ue
    << "\nloss.laplace_scale = " << c.loss.laplace_scale << "\nloss.ue_halfwidth = " << c.loss.ue_halfwidth
    << "\nloss.warmup_iters = " << c.loss.warmup_iters << "\nloss.two_sided_rc = " << b(c.loss.two_sided_rc)
    << "\nloss.mnll_center = " << (c.loss.mnll_center == MnllCenter::PerSample ? "per-sample" : "ray-color")
    << "\nloss.pairing = " << (c.loss.pairing == FeaturePairing::Matched ? "matched" : "reversed")
    << "\nloss.nll_background = " << b(c.loss.nll_background_component) << "\nfield.pos_levels = " << c.arch.pos_levels
    << "\nfield.dir_levels = " << c.arch.dir_levels << "\nfield.hidden_layers = " << c.arch.hidden_layers
    << "\nfield.hidden_width = " << c.arch.hidden_width << "\nfield.color_width = " << c.arch.color_width
    << "\nfield.position_scale = " << c.arch.position_scale << "\nfield.density_bias_init = " << c.arch.density_bias_init
    << '\n';
  if (!c.dataset_dir.empty()) o << "data.dir = " << c.dataset_dir << '\n';
  o << "data.preset = " << c.preset << "\ndata.width = " << c.width << "\ndata.height = " << c.height
    << "\ndata.n_train = " << c.n_train << "\ndata.n_heldout = " << c.n_heldout << "\ndata.seed = " << c.scene_seed
    << '\n';
  return o.str();
}

/// The dataset a config trains on: its directory if set, otherwise the preset
/// rendered at the configured size.
inline DatasetBundle resolve_dataset(const TrainConfig& cfg) {
  if (!cfg.dataset_dir.empty()) return load_dataset(cfg.dataset_dir);
  ScenePreset preset = scene_preset(cfg.preset);
  preset.rig.width = cfg.width;
  preset.rig.height = cfg.height;
  return make_dataset(preset, cfg.n_train, cfg.n_heldout, cfg.scene_seed);
}

}  // namespace divcon
