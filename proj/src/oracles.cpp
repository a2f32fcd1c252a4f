#include "splab/oracles.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "splab/diagnostics.hpp"
#include "splab/error.hpp"
#include "splab/graph.hpp"
#include "splab/model.hpp"
#include "splab/trainer.hpp"

namespace splab {

std::vector<std::vector<double>> dense_hessian(const ScalarFn& f, std::span<const double> x, double h) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> hm(n, std::vector<double>(n));
  std::vector<double> p(x.begin(), x.end());
  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    p[i] += di;
    p[j] += dj;
    const double v = f(p);
    p[i] -= di;
    p[j] -= dj;
    return v;
  };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double v = (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) / (4.0 * h * h);
      hm[i][j] = hm[j][i] = v;
    }
  return hm;
}

std::vector<double> symmetric_eigenvalues(const std::vector<std::vector<double>>& m) {
  const auto n = static_cast<Eigen::Index>(m.size());
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) a(i, j) = m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(a, Eigen::EigenvaluesOnly);
  std::vector<double> ev(solver.eigenvalues().data(), solver.eigenvalues().data() + n);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

std::vector<double> top_eigenvalues(const std::vector<std::vector<double>>& m, std::size_t k) {
  auto ev = symmetric_eigenvalues(m);
  std::sort(ev.rbegin(), ev.rend());
  ev.resize(std::min(k, ev.size()));
  return ev;
}

namespace {

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  std::function<NodeId(Graph&, const std::vector<NodeId>&)> build;
  bool away_from_zero = false;  // keep inputs off the ReLU kink
};

// L = sum(y * y) + sum(y) for the op output y, so every output element matters.
double op_loss(const OpCase& c, std::span<const double> flat, std::vector<double>* grad) {
  Graph g;
  std::vector<NodeId> ins;
  NamedTensors binds;
  std::size_t off = 0;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) {
    const std::string name = "in" + std::to_string(i);
    ins.push_back(g.input(name, true));
    const std::size_t n = shape_numel(c.shapes[i]);
    binds.emplace(name, Tensor(c.shapes[i], std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(off),
                                                                flat.begin() + static_cast<std::ptrdiff_t>(off + n))));
    off += n;
  }
  const NodeId y = c.build(g, ins);
  g.set_root(g.add(g.sum(g.mul(y, y)), g.sum(y)));
  g.forward(binds);
  const double v = g.value(g.root()).item();
  if (grad) {
    const auto grads = g.backward(Tensor::scalar(1.0));
    grad->clear();
    for (std::size_t i = 0; i < c.shapes.size(); ++i) {
      const auto& t = grads.at("in" + std::to_string(i));
      grad->insert(grad->end(), t.values().begin(), t.values().end());
    }
  }
  return v;
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", {{3, 4}, {4, 2}}, [](Graph& g, auto& in) { return g.matmul(in[0], in[1]); }});
  cases.push_back({"add", {{3, 4}, {3, 4}}, [](Graph& g, auto& in) { return g.add(in[0], in[1]); }});
  cases.push_back({"add_broadcast", {{3, 4}, {4}}, [](Graph& g, auto& in) { return g.add(in[0], in[1]); }});
  cases.push_back({"add_channel", {{2, 3, 2, 2}, {3}}, [](Graph& g, auto& in) { return g.add(in[0], in[1]); }});
  cases.push_back({"add_scalar", {{3, 4}, {1}}, [](Graph& g, auto& in) { return g.add(in[0], in[1]); }});
  cases.push_back({"mul", {{3, 4}, {3, 4}}, [](Graph& g, auto& in) { return g.mul(in[0], in[1]); }});
  cases.push_back({"mul_scalar", {{3, 4}, {1}}, [](Graph& g, auto& in) { return g.mul(in[0], in[1]); }});
  cases.push_back({"conv2d_s1", {{2, 2, 4, 4}, {3, 2, 3, 3}, {3}},
                   [](Graph& g, auto& in) { return g.conv2d(in[0], in[1], in[2], 1); }});
  cases.push_back({"conv2d_s2", {{2, 2, 5, 5}, {3, 2, 3, 3}, {3}},
                   [](Graph& g, auto& in) { return g.conv2d(in[0], in[1], in[2], 2); }});
  cases.push_back({"conv2d_nobias", {{1, 2, 3, 3}, {2, 2, 3, 3}},
                   [](Graph& g, auto& in) { return g.conv2d(in[0], in[1], std::nullopt, 1); }});
  cases.push_back({"batchnorm_train", {{4, 3}, {3}, {3}},
                   [](Graph& g, auto& in) { return g.batchnorm(in[0], in[1], in[2], BatchNormMode::kTrain); }});
  cases.push_back({"batchnorm_train_conv", {{3, 2, 2, 2}, {2}, {2}},
                   [](Graph& g, auto& in) { return g.batchnorm(in[0], in[1], in[2], BatchNormMode::kTrain); }});
  static const Tensor rm = Tensor::from({0.1, -0.2, 0.3}), rv = Tensor::from({0.5, 1.5, 2.0});
  cases.push_back({"batchnorm_eval", {{4, 3}, {3}, {3}}, [](Graph& g, auto& in) {
                     return g.batchnorm(in[0], in[1], in[2], BatchNormMode::kEval, &rm, &rv);
                   }});
  cases.push_back({"relu", {{3, 5}}, [](Graph& g, auto& in) { return g.relu(in[0]); }, true});
  cases.push_back({"pswish", {{3, 5}}, [](Graph& g, auto& in) { return g.pswish(in[0], 1.7); }});
  cases.push_back({"mish", {{3, 5}}, [](Graph& g, auto& in) { return g.mish(in[0]); }});
  cases.push_back({"global_avg_pool", {{2, 3, 2, 3}}, [](Graph& g, auto& in) { return g.global_avg_pool(in[0]); }});
  cases.push_back({"reshape", {{2, 3, 2}}, [](Graph& g, auto& in) { return g.reshape(in[0]); }});
  cases.push_back({"sum", {{3, 4}}, [](Graph& g, auto& in) { return g.sum(in[0]); }});
  cases.push_back({"softmax_cross_entropy", {{3, 4}, {3, 4}},
                   [](Graph& g, auto& in) { return g.softmax_cross_entropy(in[0], in[1]); }});
  return cases;
}

OracleCheck make_check(std::string name, double err, double tol) {
  return OracleCheck{std::move(name), err, tol, err <= tol};
}

}  // namespace

std::vector<OracleCheck> op_gradient_checks(std::uint64_t seed, std::size_t points, double tol) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<OracleCheck> out;
  for (const OpCase& c : op_cases()) {
    std::size_t n = 0;
    for (const auto& s : c.shapes) n += shape_numel(s);
    double worst = 0.0;
    for (std::size_t p = 0; p < points; ++p) {
      std::vector<double> x(n);
      for (double& v : x) {
        v = gauss(rng);
        if (c.away_from_zero && std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
      }
      std::vector<double> analytic;
      op_loss(c, x, &analytic);
      const auto numeric = finite_diff_grad([&](std::span<const double> t) { return op_loss(c, t, nullptr); }, x);
      worst = std::max(worst, relative_error(analytic, numeric));
    }
    out.push_back(make_check("grad " + c.name, worst, tol));
  }
  return out;
}

std::vector<OracleCheck> model_gradient_checks(std::uint64_t seed, double tol) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  struct Case {
    std::string name;
    ModelSpec spec;
    ForwardOptions opts;
  };
  ModelSpec small_res{.name = "res", .input_shape = {1, 4, 4}, .classes = 3};
  small_res.layers = {LayerSpec::conv(3),        LayerSpec::batchnorm(), LayerSpec::act(), LayerSpec::residual(3),
                      LayerSpec::residual(4, 2), LayerSpec::global_pool(), LayerSpec::dense(3)};
  std::vector<Case> cases = {
      {"mlp", mlp_preset(3, {5, 4}, 3), {}},
      {"mlp_ghost_pswish", mlp_preset(3, {4, 4}, 2, true),
       {.replace_relu = Activation{ActivationKind::kPSwish, 2.0}, .ghost_alpha = 0.6}},
      {"resnet_ghost_mish", small_res, {.replace_relu = Activation{ActivationKind::kMish}, .ghost_alpha = 0.4}},
  };
  std::vector<OracleCheck> out;
  for (auto& c : cases) {
    Model m = build_model(c.spec, rng());
    Shape xs = c.spec.input_shape;
    xs.insert(xs.begin(), 4);
    Tensor x(xs);
    for (double& v : x.values()) v = gauss(rng);
    std::vector<std::size_t> labels{0, 1, 0, 1};
    const Tensor target = smooth_targets(labels, c.spec.classes, 0.1);
    const ModelObjective obj(m, x, target, c.opts);
    const auto theta = m.flat_values();
    const auto analytic = obj.grad(theta);
    const auto numeric = finite_diff_grad(obj.loss_fn(), theta);
    out.push_back(make_check("model grad " + c.name, relative_error(analytic, numeric), tol));
  }
  return out;
}

std::vector<OracleCheck> hessian_checks(std::uint64_t seed, double tol) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<OracleCheck> out;
  const ForwardOptions smooth{.replace_relu = Activation{ActivationKind::kPSwish, 1.0}};
  for (const auto& [name, spec] : {std::pair{"12-param", mlp_preset(2, {2}, 2)}, std::pair{"17-param", mlp_preset(3, {2}, 3)}}) {
    Model m = build_model(spec, rng());
    Tensor x({6, spec.input_shape[0]});
    for (double& v : x.values()) v = gauss(rng);
    std::vector<std::size_t> labels{0, 1, 1, 0, 1, 0};
    const ModelObjective obj(m, x, smooth_targets(labels, spec.classes, 0.0), smooth);
    const auto theta = m.flat_values();
    const auto h = dense_hessian(obj.loss_fn(), theta);

    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> v(theta.size());
      for (double& e : v) e = gauss(rng);
      const auto hv = hvp_finite_diff(obj.grad_fn(), theta, v);
      std::vector<double> ref(theta.size(), 0.0);
      for (std::size_t i = 0; i < theta.size(); ++i)
        for (std::size_t j = 0; j < theta.size(); ++j) ref[i] += h[i][j] * v[j];
      worst = std::max(worst, relative_error(hv, ref));
    }
    out.push_back(make_check(std::string("hvp vs dense Hessian ") + name, worst, tol));

    const std::size_t k = 3;
    const auto expect = top_eigenvalues(h, k);
    const auto got = top_hessian_eigs(obj.grad_fn(), theta, PowerOptions{.k = k, .iters = 20000, .tol = 1e-7, .seed = 7});
    double eig_err = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      eig_err = std::max(eig_err, std::abs(got.eigenvalues[i] - expect[i]) / std::max(std::abs(expect[i]), 1e-12));
    out.push_back(make_check(std::string("top eigenvalues vs dense eigensolver ") + name, eig_err, tol));
  }
  return out;
}

}  // namespace splab
