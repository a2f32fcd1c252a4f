#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "splab/error.hpp"
#include "splab/finite_diff.hpp"
#include "splab/graph.hpp"
#include "splab/model.hpp"
#include "splab/oracles.hpp"
#include "splab/trainer.hpp"

using namespace splab;

TEST(Forward, IdentityNode) {
  Graph g;
  const NodeId x = g.input("x");
  g.mark_output("y", x);
  const auto out = g.forward({{"x", Tensor::from({1, 2})}});
  EXPECT_EQ(out.at("y"), Tensor::from({1, 2}));
}

TEST(Forward, ReluSignCases) {
  Graph g;
  g.mark_output("y", g.relu(g.input("x")));
  EXPECT_EQ(g.forward({{"x", Tensor::from({-1, 0, 2})}}).at("y"), Tensor::from({0, 0, 2}));
}

TEST(Forward, ZeroWeightTwoLayerNetIsZero) {
  Model m = build_model(mlp_preset(2, {2}, 2), 1);
  for (auto& b : m.blocks()) std::fill(b.value.values().begin(), b.value.values().end(), 0.0);
  const Tensor z = m.predict(Tensor({3, 2}, std::vector<double>{1, -2, 3, 0.5, -7, 9}), {});
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, ShapeMismatchNamesNode) {
  Graph g;
  const NodeId a = g.input("a");
  const NodeId b = g.input("b");
  g.matmul(a, b);
  try {
    g.forward({{"a", Tensor({2, 3})}, {"b", Tensor({2, 3})}});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
}

TEST(Forward, NonFiniteRaisesOverflow) {
  Graph g;
  const NodeId x = g.input("x");
  g.mul(x, x);
  EXPECT_THROW(g.forward({{"x", Tensor::from({1e200})}}), OverflowError);
}

TEST(Backward, SquareDerivative) {
  Graph g;
  const NodeId x = g.input("x", true);
  g.mul(x, x);
  g.forward({{"x", Tensor::scalar(3)}});
  EXPECT_DOUBLE_EQ(g.backward(Tensor::scalar(1)).at("x").item(), 6.0);
}

TEST(Backward, LinearSumGradient) {
  Graph g;
  const NodeId w = g.input("W", true);
  const NodeId x = g.input("x");
  g.sum(g.matmul(w, x));
  g.forward({{"W", Tensor({2, 2}, {1, 0, 0, 1})}, {"x", Tensor({2, 1}, {1, 1})}});
  EXPECT_EQ(g.backward(Tensor::scalar(1)).at("W"), Tensor({2, 2}, {1, 1, 1, 1}));
}

TEST(Backward, BeforeForwardIsStateError) {
  Graph g;
  g.relu(g.input("x", true));
  EXPECT_THROW(g.backward(Tensor::scalar(1)), StateError);
}

TEST(Backward, RandomTenParamMlpMatchesFiniteDifferences) {
  // 2 -> 2 -> 2 dense net: 4 + 2 + 4 + 2 = 12 would exceed ten, so drop the input to one feature.
  Model m = build_model(mlp_preset(1, {2}, 2), 5);
  ASSERT_EQ(m.parameter_count(), 10u);
  const Tensor x({4, 1}, {0.3, -1.2, 2.0, 0.7});
  const std::vector<std::size_t> y{0, 1, 1, 0};
  const ForwardOptions smooth{.replace_relu = Activation{ActivationKind::kPSwish, 1.0}};
  const auto target = smooth_targets(y, 2, 0.0);
  Model work = m;
  const auto theta = m.flat_values();
  const auto analytic = Model::flatten(m.evaluate(x, target, smooth, true).grads);
  const auto numeric = finite_diff_grad(
      [&](std::span<const double> t) {
        work.set_flat_values(t);
        return work.evaluate(x, target, smooth, false).loss;
      },
      theta);
  EXPECT_LE(relative_error(analytic, numeric), 1e-6);
}

TEST(Backward, FanOutAccumulatesExactly) {
  auto grad_of = [](bool twice) {
    Graph g;
    const NodeId x = g.input("x", true);
    const NodeId y = g.pswish(x, 1.3);
    if (twice)
      g.sum(g.add(y, y));
    else
      g.sum(y);
    g.forward({{"x", Tensor::from({0.4, -1.1, 2.5})}});
    return g.backward(Tensor::scalar(1)).at("x");
  };
  const Tensor one = grad_of(false), two = grad_of(true);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(two[i], 2.0 * one[i]);
}

TEST(Backward, DeterministicAcrossRuns) {
  Model m = build_model(resnet_tiny_preset({1, 4, 4}, 3), 9);
  Tensor x({2, 1, 4, 4});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  for (double& v : x.values()) v = gauss(rng);
  const auto target = smooth_targets(std::vector<std::size_t>{0, 2}, 3, 0.1);
  const auto a = m.evaluate(x, target, {}, true);
  const auto b = m.evaluate(x, target, {}, true);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grads, b.grads);
}

TEST(FiniteDiff, SquareAtThree) {
  const auto g = finite_diff_grad([](std::span<const double> x) { return x[0] * x[0]; }, std::vector<double>{3.0});
  EXPECT_NEAR(g[0], 6.0, 1e-8);
}

TEST(FiniteDiff, ConstantIsZero) {
  const auto g = finite_diff_grad([](std::span<const double>) { return 4.2; }, std::vector<double>{1, 2, 3});
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDiff, Bilinear) {
  const auto g = finite_diff_grad([](std::span<const double> x) { return x[0] * x[1]; }, std::vector<double>{2, 5});
  EXPECT_NEAR(g[0], 5.0, 1e-8);
  EXPECT_NEAR(g[1], 2.0, 1e-8);
}

TEST(FiniteDiff, NonFiniteEvaluationRaises) {
  EXPECT_THROW(finite_diff_grad([](std::span<const double> x) { return std::log(x[0]); }, std::vector<double>{0.0}),
               OverflowError);
}

namespace {

// L = 1/2 (3 x1^2 + x2^2)
std::vector<double> quad_grad(std::span<const double> x) { return {3.0 * x[0], x[1]}; }

}  // namespace

TEST(Hvp, DiagonalQuadratic) {
  const std::vector<double> theta{0.4, -0.9};
  const auto e1 = hvp_finite_diff(quad_grad, theta, std::vector<double>{1, 0});
  const auto e2 = hvp_finite_diff(quad_grad, theta, std::vector<double>{0, 1});
  EXPECT_NEAR(e1[0], 3.0, 1e-9);
  EXPECT_NEAR(e1[1], 0.0, 1e-9);
  EXPECT_NEAR(e2[0], 0.0, 1e-9);
  EXPECT_NEAR(e2[1], 1.0, 1e-9);
}

TEST(Hvp, ZeroVectorIsArgumentError) {
  EXPECT_THROW(hvp_finite_diff(quad_grad, std::vector<double>{1, 1}, std::vector<double>{0, 0}), ArgumentError);
}

TEST(Hvp, LinearInVectorOnQuadratics) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  const std::size_t n = 6;
  std::vector<std::vector<double>> a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) a[i][j] = a[j][i] = gauss(rng);
  const GradientFn grad = [&](std::span<const double> x) {
    std::vector<double> g(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i] += a[i][j] * x[j];
    return g;
  };
  std::vector<double> theta(n), v(n), w(n), mix(n);
  for (auto* vec : {&theta, &v, &w})
    for (double& e : *vec) e = gauss(rng);
  const double ca = 0.7, cb = -1.9;
  for (std::size_t i = 0; i < n; ++i) mix[i] = ca * v[i] + cb * w[i];
  const auto hm = hvp_finite_diff(grad, theta, mix);
  const auto hv = hvp_finite_diff(grad, theta, v);
  const auto hw = hvp_finite_diff(grad, theta, w);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(hm[i], ca * hv[i] + cb * hw[i], 1e-6);
}

TEST(Hvp, MatchesDenseHessianOnEightParamModel) {
  // Single dense layer 3 -> 2 plus bias: 6 + 2 = 8 parameters.
  ModelSpec spec{.name = "lin", .input_shape = {3}, .classes = 2, .layers = {LayerSpec::dense(2)}};
  Model m = build_model(spec, 4);
  ASSERT_EQ(m.parameter_count(), 8u);
  const Tensor x({5, 3}, {0.1, -0.3, 1.2, 0.8, 0.5, -1.0, -0.4, 2.0, 0.3, 1.5, -0.2, 0.0, 0.9, 0.9, -0.7});
  Model work = m;
  const auto target = smooth_targets(std::vector<std::size_t>{0, 1, 1, 0, 1}, 2, 0.0);
  const ScalarFn loss = [&](std::span<const double> t) {
    work.set_flat_values(t);
    return work.evaluate(x, target, {}, false).loss;
  };
  const GradientFn grad = [&](std::span<const double> t) {
    work.set_flat_values(t);
    return Model::flatten(work.evaluate(x, target, {}, true).grads);
  };
  const auto theta = m.flat_values();
  const auto h = dense_hessian(loss, theta);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> gauss;
  std::vector<double> v(8);
  for (double& e : v) e = gauss(rng);
  std::vector<double> ref(8, 0.0);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) ref[i] += h[i][j] * v[j];
  EXPECT_LE(relative_error(hvp_finite_diff(grad, theta, v), ref), 1e-3);
}

TEST(OracleSuites, EveryOpAtTwentyRandomPoints) {
  for (const auto& c : op_gradient_checks(123)) EXPECT_TRUE(c.pass) << c.name << " err " << c.error;
}

TEST(OracleSuites, FullModels) {
  for (const auto& c : model_gradient_checks(321)) EXPECT_TRUE(c.pass) << c.name << " err " << c.error;
}
