#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "splab/activations.hpp"
#include "splab/dataset.hpp"
#include "splab/error.hpp"
#include "splab/ghost.hpp"
#include "splab/masks.hpp"
#include "splab/model.hpp"
#include "splab/trainer.hpp"

using namespace splab;

TEST(BetaSchedule, Endpoints) {
  EXPECT_EQ(beta_at(0, 30, 1.0, 10.0), 1.0);
  EXPECT_EQ(beta_at(15, 30, 1.0, 10.0), 5.5);
  EXPECT_EQ(beta_at(30, 30, 1.0, 10.0), kReluBeta);
  EXPECT_EQ(beta_at(31, 30, 1.0, 10.0), kReluBeta);
  EXPECT_TRUE(std::isinf(beta_at(30, 30, 1.0, 10.0)));
}

TEST(BetaSchedule, BadArguments) {
  EXPECT_THROW(beta_at(0, 30, 0.0, 10.0), ArgumentError);
  EXPECT_THROW(beta_at(0, 30, -1.0, 10.0), ArgumentError);
  EXPECT_THROW(beta_at(0, 0, 1.0, 10.0), ArgumentError);
}

TEST(AlphaSchedule, Endpoints) {
  EXPECT_EQ(alpha_at(0, 30), 1.0);
  EXPECT_EQ(alpha_at(15, 30), 0.5);
  EXPECT_EQ(alpha_at(30, 30), 0.0);
  EXPECT_EQ(alpha_at(100, 30), 0.0);
}

TEST(Schedules, MonotoneForBothShapes) {
  for (auto shape : {ScheduleShape::kLinear, ScheduleShape::kCosine}) {
    double pb = 0.0, pa = 2.0;
    for (std::size_t e = 0; e <= 40; ++e) {
      const double b = beta_at(e, 30, 1.0, 10.0, shape), a = alpha_at(e, 30, 1.0, shape);
      EXPECT_GE(b, pb);
      EXPECT_LE(a, pa);
      EXPECT_GE(a, 0.0);
      pb = b;
      pa = a;
    }
    EXPECT_EQ(beta_at(0, 30, 1.0, 10.0, shape), 1.0);
    EXPECT_EQ(alpha_at(0, 30, 1.0, shape), 1.0);
  }
}

TEST(GhostMode, DefaultPolicyStatesAndInvariant) {
  const std::vector<std::size_t> ms{30, 45};
  const GhostSchedule s = ghost_mode({}, ms);
  EXPECT_EQ(s.t_end(), 30u);
  for (std::size_t e = 0; e < 60; ++e) {
    const GhostState st = s.at(e);
    if (st.phase == GhostPhase::kPostGhost) {
      EXPECT_EQ(st.alpha, 0.0);
      EXPECT_TRUE(std::isinf(st.beta));
      const ForwardOptions o = s.forward_options(e);
      EXPECT_FALSE(o.replace_relu.has_value());
      EXPECT_EQ(o.ghost_alpha, 0.0);
    }
  }
  EXPECT_FALSE(s.at(29).relu_swapped());
  EXPECT_TRUE(s.at(30).relu_swapped());
}

TEST(GhostMode, KeepForeverHoldsAlphaOne) {
  const std::vector<std::size_t> ms{30, 45};
  const GhostSchedule s = ghost_mode({.policy = GhostPolicy::kKeepForever}, ms);
  for (std::size_t e : {0ul, 29ul, 30ul, 45ul, 59ul}) {
    EXPECT_EQ(s.at(e).alpha, 1.0);
    EXPECT_EQ(s.at(e).beta, 1.0);
    EXPECT_FALSE(s.at(e).relu_swapped());
  }
}

TEST(GhostMode, AbruptRemovalIsAStep) {
  const std::vector<std::size_t> ms{30, 45};
  const GhostSchedule s = ghost_mode({.policy = GhostPolicy::kAbruptRemoval}, ms);
  EXPECT_EQ(s.at(0).alpha, 1.0);
  EXPECT_EQ(s.at(29).alpha, 1.0);
  EXPECT_EQ(s.at(29).beta, 1.0);
  EXPECT_EQ(s.at(30).alpha, 0.0);
  EXPECT_TRUE(s.at(30).relu_swapped());
}

TEST(GhostMode, SecondDecayUsesSecondMilestone) {
  const std::vector<std::size_t> ms{30, 45};
  const GhostSchedule s = ghost_mode({.policy = GhostPolicy::kGhostAtSecondDecay}, ms);
  EXPECT_GT(s.at(44).alpha, 0.0);
  EXPECT_EQ(s.at(45).alpha, 0.0);
  const std::vector<std::size_t> one{30};
  EXPECT_THROW(ghost_mode({.policy = GhostPolicy::kGhostAtSecondDecay}, one), ConfigError);
  EXPECT_THROW(ghost_mode({}, std::vector<std::size_t>{}), ConfigError);
}

TEST(GhostMode, UnknownPolicyIsConfigError) {
  EXPECT_THROW(parse_ghost_policy("sometimes"), ConfigError);
  EXPECT_THROW(parse_schedule_shape("step"), ConfigError);
  for (auto p : {GhostPolicy::kGhost, GhostPolicy::kKeepForever, GhostPolicy::kGhostAtSecondDecay,
                 GhostPolicy::kAbruptRemoval})
    EXPECT_EQ(parse_ghost_policy(ghost_policy_name(p)), p);
}

TEST(GhostMode, DisabledHalvesReportNeutralValues) {
  const std::vector<std::size_t> ms{30};
  const GhostSchedule skip_only = ghost_mode({}, ms, true, false);
  EXPECT_TRUE(std::isinf(skip_only.at(3).beta));
  EXPECT_GT(skip_only.at(3).alpha, 0.0);
  EXPECT_FALSE(skip_only.forward_options(3).replace_relu.has_value());
  const GhostSchedule soft_only = ghost_mode({}, ms, false, true);
  EXPECT_EQ(soft_only.at(3).alpha, 0.0);
  EXPECT_EQ(soft_only.forward_options(3).ghost_alpha, 0.0);
  ASSERT_TRUE(soft_only.forward_options(3).replace_relu.has_value());
  EXPECT_EQ(soft_only.forward_options(3).replace_relu->kind, ActivationKind::kPSwish);
}

TEST(Rehabilitation, PostGhostForwardIsBitIdenticalToPlainModel) {
  const std::vector<std::size_t> ms{4, 6};
  const Model m = build_model(resnet_tiny_preset({1, 6, 6}, 3), 5);
  Tensor x({3, 1, 6, 6});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::cos(0.61 * static_cast<double>(i));
  const Tensor plain = m.predict(x, {});
  for (auto policy : {GhostPolicy::kGhost, GhostPolicy::kAbruptRemoval, GhostPolicy::kGhostAtSecondDecay}) {
    const GhostSchedule s = ghost_mode({.policy = policy}, ms);
    for (std::size_t e = s.t_end(); e < 8; ++e) EXPECT_EQ(m.predict(x, s.forward_options(e)), plain);
    EXPECT_NE(m.predict(x, s.forward_options(0)), plain);
  }
  const GhostSchedule keep = ghost_mode({.policy = GhostPolicy::kKeepForever}, ms);
  EXPECT_NE(m.predict(x, keep.forward_options(7)), plain);
}

TEST(SwapDeviation, BoundedForStandardizedPreActivations) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> pre(100000);
  for (double& v : pre) v = g(rng);
  const double dev = swap_deviation(pre, 10.0);
  EXPECT_LE(dev, 0.05);
  double brute = 0;
  for (double v : pre) brute = std::max(brute, std::abs(pswish_value(v, 10.0) - relu_value(v)));
  EXPECT_EQ(dev, brute);
}

TEST(SwapDeviation, RecordedByTrainerAtTheSwap) {
  const Dataset d = make_synthetic({.name = "spirals", .n = 200, .noise = 0.05, .seed = 2});
  Model m = build_model(mlp_preset(2, {16, 16}, 2, true), 1);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 32;
  cfg.milestones = {2};
  cfg.gsw = true;
  cfg.gsk = true;
  const TrainResult r = train(m, d, cfg);
  ASSERT_FALSE(std::isnan(r.swap_deviation));
  EXPECT_LE(r.swap_deviation, 0.05);
  EXPECT_TRUE(std::isinf(r.history[2].beta));
  EXPECT_EQ(r.history[2].alpha, 0.0);
  EXPECT_EQ(r.history[1].alpha, 0.5);
}

TEST(GhostConfig, ValidationRejectsBadValues) {
  EXPECT_THROW((GhostConfig{.beta0 = 0.0}.validate()), ConfigError);
  EXPECT_THROW((GhostConfig{.beta0 = 5.0, .beta_max = 1.0}.validate()), ConfigError);
  EXPECT_THROW((GhostConfig{.alpha0 = 1.5}.validate()), ConfigError);
  EXPECT_NO_THROW(GhostConfig{}.validate());
}
