#include "divcon/config.hpp"
#include "divcon/dataset_io.hpp"
#include "divcon/mask_audit.hpp"
#include "divcon/metrics.hpp"
#include "divcon/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace divcon;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out << text;
}

std::string padded(long v, int width = 6) {
  std::ostringstream s;
  s << std::setw(width) << std::setfill('0') << v;
  return s.str();
}

json metrics_json(const MetricsReport& r) {
  json images = json::array();
  for (const ImageMetrics& m : r.images) images.push_back({{"name", m.name}, {"psnr", m.psnr}, {"ssim", m.ssim}, {"avge", m.avge}});
  return {{"psnr", r.psnr}, {"ssim", r.ssim}, {"avge", r.avge},
          {"avge_variant", std::to_string(r.avge_terms) + "-term"}, {"images", images}};
}

json step_json(const StepRecord& r) {
  return {{"iteration", r.iteration}, {"total", r.loss.total},   {"mse", r.loss.mse},
          {"rc", r.loss.rc},          {"pbf", r.loss.pbf},       {"mnll", r.loss.mnll},
          {"nll", r.loss.nll},        {"ue", r.loss.ue},         {"masked_fraction", r.loss.masked_fraction},
          {"augmented_rays", r.loss.augmented_rays}, {"lr", r.learning_rate}, {"grad_norm", r.grad_norm}};
}

TrainConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  TrainConfig cfg = path.empty() ? TrainConfig{} : load_train_config(path);
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorCode::BadConfig, "override '" + kv + "' is not key=value");
    apply_config_value(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& out_dir) {
  const TrainConfig cfg = config_from(config, overrides);
  const DatasetBundle data = resolve_dataset(cfg);
  const fs::path out(out_dir);
  fs::create_directories(out / "checkpoints");
  write_text(out / "config.txt", format_config(cfg));
  std::ofstream metrics(out / "metrics.jsonl");
  std::ofstream evals(out / "eval.jsonl");
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) { metrics << step_json(r).dump() << '\n'; };
  cb.on_checkpoint = [&](long it, const FieldModel& m) {
    save_checkpoint(m, (out / "checkpoints" / ("iter_" + padded(it) + ".ckpt")).string());
  };
  cb.on_eval = [&](long it, const FieldModel& m) {
    std::vector<Image> renders;
    const MetricsReport report = evaluate_heldout(m, data, cfg, &renders);
    const fs::path dir = out / "renders" / ("iter_" + padded(it));
    fs::create_directories(dir);
    for (std::size_t i = 0; i < renders.size(); ++i) write_ppm(renders[i], (dir / (report.images[i].name + ".ppm")).string());
    json j = metrics_json(report);
    j["iteration"] = it;
    evals << j.dump() << '\n' << std::flush;
    std::cout << "iter " << it << " heldout psnr " << report.psnr << " ssim " << report.ssim << '\n';
  };
  const TrainResult res = run_training(cfg, data, cb);
  save_checkpoint(res.model, (out / "checkpoints" / "final.ckpt").string());
  const MetricsReport final_report = evaluate_heldout(res.model, data, cfg);
  json summary = metrics_json(final_report);
  summary["iterations"] = cfg.iterations;
  summary["seconds"] = res.seconds;
  summary["mean_masked_fraction"] = mean_masked_fraction(res.history);
  write_text(out / "summary.json", summary.dump(2) + "\n");
  std::cout << "final heldout psnr " << final_report.psnr << " ssim " << final_report.ssim << " avge(2-term) "
            << final_report.avge << '\n';
  return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& overrides,
               const std::string& split, const std::string& out_dir) {
  const FieldModel model = load_checkpoint(checkpoint);
  const TrainConfig cfg = config_from(config, overrides);
  const DatasetBundle data = resolve_dataset(cfg);
  if (split != "train" && split != "heldout" && split != "all") fail(ErrorCode::BadConfig, "split must be train, heldout or all");
  const RenderOptions opt = render_options_for(data, cfg);
  const fs::path out(out_dir);
  fs::create_directories(out);
  for (std::size_t i = 0; i < data.cameras.size(); ++i) {
    if (split != "all" && to_string(data.splits[i]) != split) continue;
    const RenderedView v = render_image(model, data.cameras[i], opt);
    const std::string stem = std::string(to_string(data.splits[i])) + "_" + padded(static_cast<long>(i), 3);
    write_ppm(v.rgb, (out / (stem + ".ppm")).string());
    write_ppm(depth_to_gray(v.depth, data.t_far), (out / (stem + "_depth.ppm")).string());
  }
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out_path) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) fail(ErrorCode::Io, "no .ppm images in " + gt_dir);
  std::vector<Image> pred, gt;
  for (const std::string& n : names) {
    if (!fs::exists(fs::path(pred_dir) / n)) fail(ErrorCode::Io, "prediction missing for " + n);
    pred.push_back(read_ppm((fs::path(pred_dir) / n).string()));
    gt.push_back(read_ppm((fs::path(gt_dir) / n).string()));
  }
  const std::string report = metrics_json(evaluate_images(pred, gt, names)).dump(2) + "\n";
  if (out_path.empty()) std::cout << report;
  else write_text(out_path, report);
  return 0;
}

int cmd_mask_audit(const MaskAuditConfig& cfg, const std::string& sampling, const std::string& out_csv,
                   const std::string& summary_path) {
  MaskAuditConfig c = cfg;
  if (sampling == "area") c.sampling = SphereSampling::AreaUniform;
  else if (sampling != "angle") fail(ErrorCode::BadConfig, "sampling must be angle or area");
  const MaskAuditResult res = run_mask_audit(c);
  write_text(out_csv, audit_csv(res.records));
  const MaskAuditSummary& s = res.summary;
  const json j{{"rays", s.rays},
               {"redraws", s.redraws},
               {"oracle_consistent", s.oracle_consistent},
               {"argmax", {{"agreement", s.argmax.agreement}, {"precision", s.argmax.precision}, {"accept_rate", s.argmax.accept_rate}}},
               {"rendered_depth", {{"agreement", s.depth.agreement}, {"precision", s.depth.precision}, {"accept_rate", s.depth.accept_rate}}}};
  if (!summary_path.empty()) write_text(summary_path, j.dump(2) + "\n");
  std::cout << "argmax agreement " << s.argmax.agreement << " precision " << s.argmax.precision
            << " | rendered-depth agreement " << s.depth.agreement << " precision " << s.depth.precision << '\n';
  return 0;
}

int cmd_make_scene(const std::string& preset_name, std::uint64_t seed, int width, int height, int n_train, int n_heldout,
                   const std::string& out_dir) {
  ScenePreset preset = scene_preset(preset_name);
  preset.rig.width = width;
  preset.rig.height = height;
  save_dataset(make_dataset(preset, n_train, n_heldout, seed), out_dir);
  return 0;
}

int cmd_ablate(const std::string& config, const std::vector<std::string>& overrides, const std::string& arms_csv,
               const std::string& out_dir) {
  const TrainConfig cfg = config_from(config, overrides);
  const DatasetBundle data = resolve_dataset(cfg);
  std::vector<std::string> arms;
  std::stringstream ss(arms_csv);
  for (std::string a; std::getline(ss, a, ',');)
    if (!detail::trim(a).empty()) arms.push_back(detail::trim(a));
  json rows = json::array();
  std::cout << std::left << std::setw(8) << "arm" << std::setw(10) << "psnr" << std::setw(10) << "ssim" << std::setw(10)
            << "masked" << "seconds\n";
  ablation_run(data, cfg, arms, [&](const AblationRow& r) {
    std::cout << std::setw(8) << r.arm << std::setw(10) << r.heldout.psnr << std::setw(10) << r.heldout.ssim
              << std::setw(10) << r.masked_fraction << r.seconds << std::endl;
    json j = metrics_json(r.heldout);
    j["arm"] = r.arm;
    j["masked_fraction"] = r.masked_fraction;
    j["final_loss"] = r.final_loss;
    j["seconds"] = r.seconds;
    rows.push_back(j);
  });
  write_text(fs::path(out_dir) / "ablation.json", rows.dump(2) + "\n");
  return 0;
}

const std::set<std::string> kSubcommands{"train", "render", "eval", "mask-audit", "make-scene", "ablate"};

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1 && argv[1][0] != '-' && !kSubcommands.count(argv[1])) {
    std::cerr << "error: " << Error(ErrorCode::UnknownSubcommand, std::string("'") + argv[1] + "'").what() << '\n';
    return 2;
  }

  CLI::App app{"Radiance-field trainer with sphere-based ray augmentation"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, split = "heldout", pred, gt, arms = "base,rc,rc+pbf,full,bf";
  std::vector<std::string> overrides;

  auto* train = app.add_subcommand("train", "Train a field from a config file");
  train->add_option("--config", config, "key = value config file")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--set", overrides, "Override a config key (key=value)");

  auto* render = app.add_subcommand("render", "Render dataset views from a checkpoint");
  render->add_option("--checkpoint", checkpoint)->required();
  render->add_option("--config", config, "Config naming the dataset and sampling");
  render->add_option("--set", overrides);
  render->add_option("--split", split, "train, heldout or all");
  render->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "PSNR/SSIM/AVGE of matching PPM files");
  eval->add_option("--pred", pred)->required();
  eval->add_option("--gt", gt)->required();
  eval->add_option("--out", out, "Report path (stdout if omitted)");

  MaskAuditConfig audit;
  std::string sampling = "angle", summary;
  auto* mask = app.add_subcommand("mask-audit", "Compare the consistency mask with the occlusion oracle");
  mask->add_option("--preset", audit.preset);
  mask->add_option("--rays", audit.rays);
  mask->add_option("--sharpness", audit.sharpness);
  mask->add_option("--samples", audit.samples);
  mask->add_option("--epsilon", audit.epsilon);
  mask->add_option("--seed", audit.seed);
  mask->add_option("--sampling", sampling, "angle or area");
  mask->add_option("--out", out, "CSV path")->required();
  mask->add_option("--summary", summary, "Summary JSON path");

  std::string preset = "three-spheres";
  std::uint64_t seed = 0;
  int width = 64, height = 64, n_train = 4, n_heldout = 4;
  auto* make = app.add_subcommand("make-scene", "Render a preset into a dataset directory");
  make->add_option("--preset", preset);
  make->add_option("--seed", seed);
  make->add_option("--width", width);
  make->add_option("--height", height);
  make->add_option("--n-train", n_train);
  make->add_option("--n-heldout", n_heldout);
  make->add_option("--out", out)->required();

  auto* ablate = app.add_subcommand("ablate", "Train each loss arm from the same seed");
  ablate->add_option("--config", config)->required();
  ablate->add_option("--set", overrides);
  ablate->add_option("--arms", arms, "Comma-separated arms: base, rc, rc+pbf, full, bf");
  ablate->add_option("--out", out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return cmd_train(config, overrides, out);
    if (*render) return cmd_render(checkpoint, config, overrides, split, out);
    if (*eval) return cmd_eval(pred, gt, out);
    if (*mask) return cmd_mask_audit(audit, sampling, out, summary);
    if (*make) return cmd_make_scene(preset, seed, width, height, n_train, n_heldout, out);
    if (*ablate) return cmd_ablate(config, overrides, arms, out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
