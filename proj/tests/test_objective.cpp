#include "gradcheck.hpp"

#include "divcon/trainer.hpp"

#include <gtest/gtest.h>

using namespace divcon;
using namespace divcon::testing;

namespace {

ObjectiveConfig small_objective(const LossConfig& loss) {
  ObjectiveConfig c;
  c.samples = 16;
  c.loss = loss;
  c.background = Vec3::Ones();
  return c;
}

LossConfig full_loss() {
  LossConfig l;
  l.warmup_iters = 0;
  return l;
}

}  // namespace

TEST(Objective, EveryTermGradientMatchesFiniteDifferences) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 3);
  const RayBatch batch = gradcheck_batch(4);
  ObjectiveOptions opt;
  opt.mask_override = true;
  for (const TermCase& tc : term_cases()) {
    const GradCheckStats st = check_objective_gradient(model, small_objective(tc.loss), batch, opt, 25, 9);
    EXPECT_EQ(st.checked, 25) << tc.name;
    EXPECT_LT(st.max_rel_err, 1e-3) << tc.name;
  }
}

TEST(Objective, TwoSidedAndClippedGradientsMatchFiniteDifferences) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 5);
  const RayBatch batch = gradcheck_batch(6, 2);
  LossConfig loss = term_cases().back().loss;
  loss.two_sided_rc = true;
  loss.mnll_center = MnllCenter::RayColor;
  ObjectiveConfig cfg = small_objective(loss);
  cfg.mask.clip.enabled = true;
  cfg.mask.clip.angle_threshold = 0.3;
  cfg.augment_multiplier = 2;
  ObjectiveOptions opt;
  opt.mask_override = true;
  const GradCheckStats st = check_objective_gradient(model, cfg, batch, opt, 25, 10);
  EXPECT_EQ(st.checked, 25);
  EXPECT_LT(st.max_rel_err, 1e-3);
}

TEST(Objective, RejectedRaysSendNoGradient) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 7);
  const RayBatch batch = gradcheck_batch(8);
  ObjectiveOptions rejected;
  rejected.mask_override = false;
  const ObjectiveResult r = evaluate_objective(model, small_objective(full_loss()), batch, 10, rejected);
  ASSERT_EQ(r.pairs.size(), 4u);
  EXPECT_EQ(r.accepted, 0u);
  EXPECT_EQ(r.surface_gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.inner_gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.loss.rc, 0.0);
  EXPECT_EQ(r.loss.pbf, 0.0);
  EXPECT_EQ(r.loss.mnll, 0.0);

  // Identical to a run with the augmentation terms switched off.
  LossConfig base = full_loss();
  base.lambda_rc = base.lambda_pbf = base.lambda_mnll = 0.0;
  const ObjectiveResult b = evaluate_objective(model, small_objective(base), batch, 10);
  EXPECT_TRUE(b.pairs.empty());
  EXPECT_EQ(r.gradient, b.gradient);
  EXPECT_EQ(r.loss.total, b.loss.total);

  ObjectiveOptions accepted;
  accepted.mask_override = true;
  const ObjectiveResult a = evaluate_objective(model, small_objective(full_loss()), batch, 10, accepted);
  EXPECT_GT(a.surface_gradient.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(a.inner_gradient.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Objective, WarmupSkipsAugmentation) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 7);
  LossConfig loss;
  loss.warmup_iters = 50;
  const ObjectiveResult r = evaluate_objective(model, small_objective(loss), gradcheck_batch(1), 49);
  EXPECT_TRUE(r.pairs.empty());
  EXPECT_EQ(r.loss.masked_fraction, 0.0);
  const ObjectiveResult s = evaluate_objective(model, small_objective(loss), gradcheck_batch(1), 50);
  EXPECT_EQ(s.pairs.size(), 4u);
  ObjectiveOptions force;
  force.force_augmentation = true;
  EXPECT_EQ(evaluate_objective(model, small_objective(loss), gradcheck_batch(1), 0, force).pairs.size(), 4u);
}

TEST(Objective, MaskedFractionStaysInUnitInterval) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 11);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const ObjectiveResult r = evaluate_objective(model, small_objective(full_loss()), gradcheck_batch(s), 10);
    EXPECT_GE(r.loss.masked_fraction, 0.0);
    EXPECT_LE(r.loss.masked_fraction, 1.0);
    EXPECT_EQ(r.loss.masked_fraction, static_cast<double>(r.accepted) / r.pairs.size());
  }
}

TEST(Objective, ExtraAugmentationsDoNotRecountOriginalTerms) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 12);
  ObjectiveConfig one = small_objective(full_loss()), two = one;
  two.augment_multiplier = 2;
  const ObjectiveResult a = evaluate_objective(model, one, gradcheck_batch(2, 1), 10);
  const ObjectiveResult b = evaluate_objective(model, two, gradcheck_batch(2, 2), 10);
  EXPECT_EQ(b.pairs.size(), 8u);
  EXPECT_NEAR(a.loss.mse, b.loss.mse, 1e-15);
  EXPECT_NEAR(a.loss.nll, b.loss.nll, 1e-15);
  EXPECT_NEAR(a.loss.ue, b.loss.ue, 1e-15);
}

TEST(Objective, AugmentedRaysFollowTheirOriginals) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 13);
  const RayBatch batch = gradcheck_batch(3);
  const ObjectiveResult r = evaluate_objective(model, small_objective(full_loss()), batch, 10);
  for (std::size_t p = 0; p < r.pairs.size(); ++p) {
    const AugmentedPair& pair = r.pairs[p];
    const Ray& o = batch.rays[r.pair_owner[p]];
    EXPECT_NEAR((pair.surface_ray.origin - pair.surface_point).norm(), (o.origin - pair.surface_point).norm(), 1e-12);
    EXPECT_NEAR(pair.surface_ray.direction.norm(), o.direction.norm(), 1e-12);
  }
}

TEST(BatchObjective, ChunkedMatchesSerialAndIsRepeatable) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 14);
  RayBatch batch = gradcheck_batch(5);
  const RayBatch more = gradcheck_batch(6);
  for (std::size_t k = 0; k < 4; ++k) {
    batch.rays.push_back(more.rays[k]);
    batch.targets.push_back(more.targets[k]);
    batch.draws.push_back(more.draws[k]);
    batch.ray_ids.push_back(4 + k);
  }
  const ObjectiveConfig cfg = small_objective(full_loss());
  const ObjectiveResult serial = batch_objective(model, cfg, batch, 10, 1);
  const ObjectiveResult a = batch_objective(model, cfg, batch, 10, 3), b = batch_objective(model, cfg, batch, 10, 3);
  EXPECT_NEAR(a.loss.total, serial.loss.total, 1e-12);
  EXPECT_LT((a.gradient - serial.gradient).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.loss.masked_fraction, serial.loss.masked_fraction);
  EXPECT_EQ(a.gradient, b.gradient);
  EXPECT_EQ(a.loss.total, b.loss.total);
  ASSERT_EQ(a.pair_owner.size(), serial.pair_owner.size());
  EXPECT_EQ(a.pair_owner, serial.pair_owner);
}

TEST(Objective, JitterIsKeyedAndChangesSamples) {
  const FieldModel model = FieldModel::initialized(gradcheck_arch(), 15);
  ObjectiveConfig cfg = small_objective(full_loss());
  cfg.jitter = true;
  const RayBatch batch = gradcheck_batch(7);
  const ObjectiveResult a = evaluate_objective(model, cfg, batch, 10), b = evaluate_objective(model, cfg, batch, 10);
  const ObjectiveResult c = evaluate_objective(model, cfg, batch, 11);
  EXPECT_EQ(a.loss.total, b.loss.total);
  EXPECT_NE(a.loss.total, c.loss.total);
}
