#include "divcon/config.hpp"
#include "divcon/dataset_io.hpp"
#include "divcon/mask_audit.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace divcon;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("divcon_io_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndBlankLines) {
  const TrainConfig c = parse_train_config(
      "# training\n"
      "iterations = 123\n"
      "\n"
      "learning_rate=1e-3   # inline comment\n"
      "jitter = true\n"
      "sphere_sampling = area\n"
      "mask.epsilon = 3\n"
      "mask.source = depth\n"
      "mask.clip = on\n"
      "mask.clip_angle_deg = 45\n"
      "loss.mnll_center = ray-color\n"
      "loss.pairing = reversed\n"
      "field.hidden_width = 32\n"
      "data.preset = occluder\n");
  EXPECT_EQ(c.iterations, 123);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_TRUE(c.jitter);
  EXPECT_EQ(c.sphere_sampling, SphereSampling::AreaUniform);
  EXPECT_EQ(c.mask.epsilon, 3);
  EXPECT_EQ(c.mask.source, MaskSource::RenderedDepth);
  EXPECT_TRUE(c.mask.clip.enabled);
  EXPECT_NEAR(c.mask.clip.angle_threshold, kPi / 4, 1e-15);
  EXPECT_EQ(c.loss.mnll_center, MnllCenter::RayColor);
  EXPECT_EQ(c.loss.pairing, FeaturePairing::Reversed);
  EXPECT_EQ(c.arch.hidden_width, 32);
  EXPECT_EQ(c.preset, "occluder");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  for (const char* text : {"itrations = 5\n", "iterations = five\n", "iterations\n", "jitter = maybe\n",
                           "mask.source = median\n", "batch_rays = 0\n", "seed = -1\n"}) {
    try {
      parse_train_config(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::BadConfig) << text;
    }
  }
}

TEST(Config, FormatRoundTrips) {
  TrainConfig c;
  c.iterations = 77;
  c.learning_rate = 3.3e-4;
  c.loss.temperature = 0.07;
  c.mask.clip.enabled = true;
  c.mask.clip.angle_threshold = 1.1;
  c.dataset_dir = "/tmp/somewhere";
  const std::string text = format_config(c);
  const TrainConfig back = parse_train_config(text);
  EXPECT_EQ(format_config(back), text);
  EXPECT_EQ(back.iterations, 77);
  EXPECT_DOUBLE_EQ(back.loss.temperature, 0.07);
}

TEST(Config, OverridesApplyOnTopOfABase) {
  TrainConfig base;
  base.iterations = 10;
  const TrainConfig c = parse_train_config("batch_rays = 8\n", base);
  EXPECT_EQ(c.iterations, 10);
  EXPECT_EQ(c.batch_rays, 8);
  TrainConfig d;
  apply_config_value(d, "loss.lambda_rc", "0");
  EXPECT_EQ(d.loss.lambda_rc, 0.0);
  EXPECT_THROW(load_train_config("/nonexistent/config.txt"), Error);
}

TEST(DatasetIo, SaveLoadRoundTrip) {
  ScenePreset p = three_spheres_preset();
  p.rig.width = p.rig.height = 12;
  const DatasetBundle d = make_dataset(p, 3, 2, 5);
  const fs::path dir = scratch("dataset");
  save_dataset(d, dir.string());
  ASSERT_TRUE(fs::exists(dir / "manifest.json"));
  ASSERT_TRUE(fs::exists(dir / "train_000.ppm"));
  ASSERT_TRUE(fs::exists(dir / "heldout_004.ppm"));
  const DatasetBundle back = load_dataset(dir.string());
  ASSERT_EQ(back.images.size(), 5u);
  EXPECT_EQ(back.splits, d.splits);
  EXPECT_EQ(back.t_near, d.t_near);
  EXPECT_EQ(back.background, Background::White);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back.cameras[i].center(), d.cameras[i].center());
    EXPECT_EQ(back.cameras[i].rotation(), d.cameras[i].rotation());
    EXPECT_EQ(back.cameras[i].intrinsics().focal, d.cameras[i].intrinsics().focal);
    for (std::size_t k = 0; k < d.images[i].data.size(); ++k)
      EXPECT_NEAR(back.images[i].data[k], d.images[i].data[k], 0.5 / 255 + 1e-12);
  }
  fs::remove_all(dir);
}

TEST(DatasetIo, ManifestSchema) {
  ScenePreset p = occluder_preset();
  p.rig.width = 8;
  p.rig.height = 6;
  const DatasetBundle d = make_dataset(p, 1, 1, 0);
  const nlohmann::json j = manifest_json(d, {"a.ppm", "b.ppm"});
  EXPECT_EQ(j["version"], 1);
  EXPECT_EQ(j["width"], 8);
  EXPECT_EQ(j["height"], 6);
  EXPECT_EQ(j["background"], "black");
  ASSERT_EQ(j["frames"].size(), 2u);
  EXPECT_EQ(j["frames"][1]["split"], "heldout");
  const auto& t = j["frames"][0]["transform"];
  ASSERT_EQ(t.size(), 16u);
  EXPECT_EQ(t[15], 1.0);
  EXPECT_EQ(t[12], 0.0);
  EXPECT_DOUBLE_EQ(t[3].get<double>(), d.cameras[0].center().x());
}

TEST(DatasetIo, BadInputsFail) {
  const fs::path dir = scratch("bad");
  fs::create_directories(dir);
  EXPECT_THROW(load_dataset(dir.string()), Error);
  std::ofstream(dir / "manifest.json") << "{ not json";
  try {
    load_dataset(dir.string());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadConfig);
  }
  fs::remove_all(dir);
}

TEST(ResolveDataset, PresetOrDirectory) {
  TrainConfig c;
  c.width = c.height = 10;
  c.n_train = 2;
  c.n_heldout = 1;
  const DatasetBundle a = resolve_dataset(c);
  EXPECT_EQ(a.images.size(), 3u);
  EXPECT_EQ(a.images[0].width, 10);
  const fs::path dir = scratch("resolve");
  save_dataset(a, dir.string());
  c.dataset_dir = dir.string();
  EXPECT_EQ(resolve_dataset(c).images.size(), 3u);
  fs::remove_all(dir);
}

TEST(MaskAudit, SmallRunIsDeterministicAndWellFormed) {
  MaskAuditConfig cfg;
  cfg.rays = 300;
  const MaskAuditResult a = run_mask_audit(cfg), b = run_mask_audit(cfg);
  ASSERT_EQ(a.records.size(), 300u);
  EXPECT_EQ(audit_csv(a.records), audit_csv(b.records));
  const std::string csv = audit_csv(a.records);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "ray_id,s,s_prime,mask,oracle");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 301);
  for (const AuditRecord& r : a.records)
    EXPECT_EQ(r.mask, std::labs(static_cast<long>(r.s) - static_cast<long>(r.s_prime)) <= cfg.epsilon);
  EXPECT_GE(a.summary.argmax.agreement, 0.0);
  EXPECT_LE(a.summary.argmax.agreement, 1.0);
  cfg.seed = 1;
  EXPECT_NE(audit_csv(run_mask_audit(cfg).records), csv);
}

TEST(VerdictStats, CountsAgreementAndPrecision) {
  std::vector<AuditRecord> recs(4);
  recs[0].mask = true, recs[0].oracle = true;
  recs[1].mask = true, recs[1].oracle = false;
  recs[2].mask = false, recs[2].oracle = false;
  recs[3].mask = false, recs[3].oracle = true;
  const VerdictStats v = verdict_stats(recs, &AuditRecord::mask);
  EXPECT_EQ(v.agreement, 0.5);
  EXPECT_EQ(v.precision, 0.5);
  EXPECT_EQ(v.accepted, 2u);
  EXPECT_EQ(v.accept_rate, 0.5);
}
