#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "splab/dataset.hpp"
#include "splab/error.hpp"
#include "splab/masks.hpp"
#include "splab/model.hpp"
#include "splab/trainer.hpp"

using namespace splab;

namespace {

Dataset blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  Tensor x({n, 2});
  std::vector<std::size_t> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = i % 2;
    const double c = y[i] ? 2.0 : -2.0;
    x[i * 2] = c + g(rng);
    x[i * 2 + 1] = -c + g(rng);
  }
  return split_and_normalize("blobs", x, y, 2, 0.25, seed);
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.milestones = {};
  return c;
}

}  // namespace

TEST(SmoothLabels, TenClasses) {
  const auto y = smooth_labels(3, 10, 0.1);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_NEAR(y[k], k == 3 ? 0.91 : 0.01, 1e-15);
}

TEST(SmoothLabels, ZeroRatioIsOneHot) {
  EXPECT_EQ(smooth_labels(1, 4, 0.0), (std::vector<double>{0, 1, 0, 0}));
}

TEST(SmoothLabels, SumsToOne) {
  for (std::size_t k : {2ul, 3ul, 10ul, 37ul})
    for (double a : {0.0, 0.05, 0.1, 0.5, 0.99}) {
      const auto y = smooth_labels(k - 1, k, a);
      EXPECT_NEAR(std::accumulate(y.begin(), y.end(), 0.0), 1.0, 1e-12);
    }
}

TEST(SmoothLabels, BadArguments) {
  EXPECT_THROW(smooth_labels(10, 10, 0.1), ArgumentError);
  EXPECT_THROW(smooth_labels(0, 1, 0.1), ArgumentError);
  EXPECT_THROW(smooth_labels(0, 2, 1.0), ArgumentError);
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  for (std::size_t k : {2ul, 5ul, 10ul}) {
    const Tensor logits({3, k}, 0.7);
    const Tensor target = smooth_targets(std::vector<std::size_t>{0, 1, k - 1}, k, 0.0);
    EXPECT_NEAR(cross_entropy(logits, target), std::log(static_cast<double>(k)), 1e-14);
  }
}

TEST(CrossEntropy, SmoothedTargetStillLogTen) {
  const Tensor logits({1, 10}, 0.0);
  EXPECT_NEAR(cross_entropy(logits, smooth_targets(std::vector<std::size_t>{4}, 10, 0.1)), 2.302585092994046, 1e-14);
}

TEST(CrossEntropy, ConfidentCorrectLogitsApproachZero) {
  const Tensor logits({1, 3}, {50.0, 0.0, 0.0});
  EXPECT_LT(cross_entropy(logits, smooth_targets(std::vector<std::size_t>{0}, 3, 0.0)), 1e-20);
  const Tensor huge({1, 3}, {1e4, -1e4, 0.0});
  EXPECT_TRUE(std::isfinite(cross_entropy(huge, smooth_targets(std::vector<std::size_t>{1}, 3, 0.0))));
}

namespace {

std::vector<ParamBlock> one_block(std::vector<double> v, std::vector<std::uint8_t> mask = {}) {
  ParamBlock b{.name = "p", .kind = ParamKind::kWeight, .group = "p"};
  const std::size_t n = v.size();
  b.value = Tensor({n}, std::move(v));
  b.mask = std::move(mask);
  return {b};
}

}  // namespace

TEST(Sgd, VanillaStep) {
  auto blocks = one_block({1.0, -2.0});
  sgd_step(blocks, {Tensor::from({0.5, 1.0})}, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(blocks[0].value[0], 1.0 - 0.05);
  EXPECT_DOUBLE_EQ(blocks[0].value[1], -2.0 - 0.1);
}

TEST(Sgd, TwoMomentumStepsOnConstantGradient) {
  auto blocks = one_block({0.0});
  const double g = 0.7, lr = 0.1;
  sgd_step(blocks, {Tensor::from({g})}, lr, 0.9, 0.0);
  sgd_step(blocks, {Tensor::from({g})}, lr, 0.9, 0.0);
  EXPECT_NEAR(-blocks[0].value[0], lr * g * (1 + 1.9), 1e-15);
  EXPECT_NEAR(blocks[0].momentum[0], 1.9 * g, 1e-15);
}

TEST(Sgd, MaskedCoordinateUntouchedForever) {
  auto blocks = one_block({0.0, 1.0}, {0, 1});
  for (int i = 0; i < 50; ++i) sgd_step(blocks, {Tensor::from({3.0, 0.2})}, 0.1, 0.9, 2e-4);
  EXPECT_EQ(blocks[0].value[0], 0.0);
  EXPECT_EQ(blocks[0].momentum[0], 0.0);
}

TEST(Sgd, WeightDecayAddsToGradient) {
  auto blocks = one_block({2.0});
  sgd_step(blocks, {Tensor::from({0.0})}, 0.5, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(blocks[0].value[0], 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(Sgd, NonFiniteGradientNamesBlock) {
  auto blocks = one_block({1.0});
  try {
    sgd_step(blocks, {Tensor::from({std::nan("")})}, 0.1, 0.9, 0.0);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("p"), std::string::npos);
  }
}

TEST(LrSchedule, MilestonesAt90And135) {
  const std::vector<std::size_t> ms{90, 135};
  EXPECT_EQ(lr_at(0, 0.1, ms), 0.1);
  EXPECT_EQ(lr_at(89, 0.1, ms), 0.1);
  EXPECT_EQ(lr_at(90, 0.1, ms), 0.01);
  EXPECT_EQ(lr_at(134, 0.1, ms), 0.01);
  EXPECT_EQ(lr_at(135, 0.1, ms), 0.001);
  EXPECT_EQ(lr_at(179, 0.1, ms), 0.001);
}

TEST(LrSchedule, RightContinuousStepFunction) {
  const std::vector<std::size_t> ms{30, 45};
  for (std::size_t e = 0; e < 60; ++e) {
    const int n = (e >= 30) + (e >= 45);
    EXPECT_DOUBLE_EQ(lr_at(e, 0.1, ms), 0.1 * std::pow(0.1, n));
  }
}

TEST(TrainConfig, Validation) {
  TrainConfig c = quick(10);
  c.milestones = {5, 5};
  EXPECT_THROW(c.validate(), ConfigError);
  c.milestones = {10};
  EXPECT_THROW(c.validate(), ConfigError);
  c.milestones = {3};
  c.ls_alpha = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c.ls_alpha = 0.1;
  EXPECT_NO_THROW(c.validate());
}

TEST(Train, ZeroEpochsLeavesModelUntouched) {
  const Dataset d = blobs(40, 1);
  Model m = build_model(mlp_preset(2, {4}, 2), 0);
  const auto before = m.flat_values();
  const TrainResult r = train(m, d, quick(0));
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(m.flat_values(), before);
}

TEST(Train, SeparableToyFitsWithinFiveEpochs) {
  const Dataset d = blobs(200, 2);
  Model m = build_model(mlp_preset(2, {16}, 2), 1);
  const TrainResult r = train(m, d, quick(5));
  ASSERT_EQ(r.history.size(), 5u);
  EXPECT_FALSE(r.diverged);
  const ForwardOptions eval{.bn_mode = BatchNormMode::kEval};
  EXPECT_EQ(accuracy(m.predict(d.train_x, eval), d.train_y), 1.0);
  EXPECT_EQ(r.history.back().test_acc, 1.0);
}

TEST(Train, MaskAuditAfterFullRun) {
  const Dataset d = make_synthetic({.n = 300, .noise = 0.05, .seed = 1});
  Model m = build_model(mlp_preset(2, {16, 16}, 2, true), 2);
  TrainConfig c = quick(6);
  c.milestones = {3, 5};
  c.gsk = c.gsw = c.lrsi = true;
  c.ls_alpha = 0.1;
  c.rescale.iters = 3;
  train(m, random_mask(m, 0.9, 3), d, c);
  double worst = 0;
  for (const auto& b : m.blocks())
    for (std::size_t i = 0; i < b.value.size(); ++i)
      if (b.masked(i)) worst = std::max({worst, std::abs(b.value[i]), std::abs(b.momentum[i])});
  EXPECT_EQ(worst, 0.0);
}

TEST(Train, HistoryRecordsScheduleAndMetrics) {
  const Dataset d = make_synthetic({.n = 200, .noise = 0.05, .seed = 1});
  Model m = build_model(mlp_preset(2, {8, 8}, 2), 2);
  TrainConfig c = quick(6);
  c.milestones = {2, 4};
  c.gsk = c.gsw = true;
  const TrainResult r = train(m, d, c);
  ASSERT_EQ(r.history.size(), 6u);
  for (std::size_t e = 0; e < 6; ++e) {
    const RunRecord& h = r.history[e];
    EXPECT_EQ(h.epoch, e);
    EXPECT_EQ(h.lr, lr_at(e, c.lr0, c.milestones));
    EXPECT_GE(h.test_acc, 0.0);
    EXPECT_LE(h.test_acc, 1.0);
    EXPECT_TRUE(std::isfinite(h.train_loss));
    EXPECT_GE(h.grad_flow, 0.0);
    EXPECT_TRUE(h.act_sparsity.empty());
  }
  EXPECT_EQ(r.history[0].alpha, 1.0);
  EXPECT_EQ(r.history[0].beta, 1.0);
  EXPECT_EQ(r.history[1].beta, 5.5);
  EXPECT_TRUE(std::isinf(r.history[2].beta));
}

TEST(Train, BitIdenticalGivenSeed) {
  const Dataset d = make_synthetic({.n = 200, .noise = 0.05, .seed = 3});
  TrainConfig c = quick(3);
  c.milestones = {2};
  c.gsk = c.gsw = true;
  c.seed = 7;
  Model a = build_model(mlp_preset(2, {8, 8}, 2, true), 4), b = a;
  const Mask mask = random_mask(a, 0.5, 1);
  const TrainResult ra = train(a, mask, d, c), rb = train(b, mask, d, c);
  ASSERT_EQ(ra.history.size(), rb.history.size());
  for (std::size_t e = 0; e < ra.history.size(); ++e) {
    EXPECT_EQ(ra.history[e].train_loss, rb.history[e].train_loss);
    EXPECT_EQ(ra.history[e].test_loss, rb.history[e].test_loss);
    EXPECT_EQ(ra.history[e].grad_flow, rb.history[e].grad_flow);
  }
  EXPECT_EQ(a.flat_values(), b.flat_values());
  c.seed = 8;
  Model e = build_model(mlp_preset(2, {8, 8}, 2, true), 4);
  train(e, mask, d, c);
  EXPECT_NE(e.flat_values(), a.flat_values());
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  const Dataset d = make_synthetic({.n = 200, .noise = 0.05, .seed = 3});
  Model m = build_model(mlp_preset(2, {32, 32}, 2), 4);
  TrainConfig c = quick(5);
  c.lr0 = 1e4;
  const TrainResult r = train(m, d, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_LT(r.history.size(), 5u + 1);
}

TEST(Train, PostMilestoneModelHasNoGhostContributions) {
  const Dataset d = make_synthetic({.n = 200, .noise = 0.05, .seed = 3});
  Model m = build_model(mlp_preset(2, {8, 8}, 2), 4);
  TrainConfig c = quick(3);
  c.milestones = {1};
  c.gsk = c.gsw = true;
  train(m, d, c);
  const GhostSchedule s = ghost_mode(c.ghost, c.milestones);
  const ForwardOptions plain{.bn_mode = BatchNormMode::kEval};
  ForwardOptions ghosted = s.forward_options(2);
  ghosted.bn_mode = BatchNormMode::kEval;
  EXPECT_EQ(m.predict(d.test_x, ghosted), m.predict(d.test_x, plain));
}
