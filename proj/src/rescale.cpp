#include "splab/rescale.hpp"

#include <algorithm>
#include <cmath>

#include "splab/error.hpp"

namespace splab {

void RescaleOptions::validate() const {
  if (!(step > 0.0)) throw ConfigError("lrsi.step must be positive");
  if (!(fd_step > 0.0)) throw ConfigError("lrsi.fd_step must be positive");
  if (!(c_min > 0.0 && c_min <= 1.0 && c_max >= 1.0)) throw ConfigError("lrsi.bounds must satisfy 0 < c_min <= 1 <= c_max");
  if (batch < 2) throw ConfigError("lrsi.batch must be >= 2");
}

double first_step_loss(const ScalarFn& loss, const GradientFn& grad, std::span<const double> theta,
                       std::span<const double> free, double lr) {
  if (!free.empty() && free.size() != theta.size()) throw ArgumentError("free mask length differs from parameters");
  const auto g = grad(theta);
  std::vector<double> next(theta.begin(), theta.end());
  for (std::size_t i = 0; i < next.size(); ++i)
    if (free.empty() || free[i] != 0.0) next[i] -= lr * g[i];
  const double l = loss(next);
  if (!std::isfinite(l)) throw NumericError("non-finite first-step loss");
  return l;
}

double first_step_loss(const Model& model, const Tensor& x, const Tensor& target, double lr,
                       const ForwardOptions& opts) {
  const auto ev = model.evaluate(x, target, opts, true);
  Model next = model;
  for (std::size_t b = 0; b < next.blocks().size(); ++b) {
    ParamBlock& pb = next.blocks()[b];
    for (std::size_t i = 0; i < pb.value.size(); ++i)
      if (!pb.masked(i)) pb.value[i] -= lr * ev.grads[b][i];
  }
  const double l = next.evaluate(x, target, opts, false).loss;
  if (!std::isfinite(l)) throw NumericError("non-finite first-step loss");
  return l;
}

ScaleSet learn_scales(const ScaleObjective& objective, std::vector<std::string> groups, const RescaleOptions& opts) {
  opts.validate();
  const std::size_t n = groups.size();
  const double lo = std::log(opts.c_min), hi = std::log(opts.c_max);
  auto eval = [&](const std::vector<double>& u) {
    std::vector<double> c(n);
    for (std::size_t j = 0; j < n; ++j) c[j] = std::exp(u[j]);
    try {
      const double v = objective(c);
      return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    } catch (const OverflowError&) {
      return std::numeric_limits<double>::infinity();
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  ScaleSet out;
  out.groups = std::move(groups);
  std::vector<double> u(n, 0.0);
  const double start = eval(u);
  if (!std::isfinite(start)) throw NumericError("first-step objective is not finite at unit scales");
  out.initial_objective = start;
  std::vector<double> best = u;
  double best_value = start;
  for (std::size_t it = 0; it < opts.iters; ++it) {
    std::vector<double> g(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      std::vector<double> up = u, down = u;
      up[j] += opts.fd_step;
      down[j] -= opts.fd_step;
      const double d = (eval(up) - eval(down)) / (2.0 * opts.fd_step);
      g[j] = std::isfinite(d) ? d : 0.0;
    }
    for (std::size_t j = 0; j < n; ++j) u[j] = std::clamp(u[j] - opts.step * g[j], lo, hi);
    const double v = eval(u);
    out.trace.push_back(v);
    if (v < best_value) {
      best_value = v;
      best = u;
    }
  }
  out.scales.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.scales[j] = std::exp(best[j]);
  out.final_objective = best_value;
  return out;
}

ScaleSet learn_scales(const Model& model, const Tensor& x, const Tensor& target, double lr,
                      const RescaleOptions& opts, const ForwardOptions& fwd) {
  ScaleSet unit;
  unit.groups = model.groups();
  Model work = model;
  const ScaleObjective objective = [&](std::span<const double> c) {
    work = model;
    unit.scales.assign(c.begin(), c.end());
    apply_scales(work, unit);
    return first_step_loss(work, x, target, lr, fwd);
  };
  return learn_scales(objective, model.groups(), opts);
}

void apply_scales(Model& model, const ScaleSet& scales) {
  if (scales.groups.size() != scales.scales.size()) throw ArgumentError("scale groups and values disagree");
  for (std::size_t j = 0; j < scales.groups.size(); ++j) {
    const double c = scales.scales[j];
    if (!(c > 0.0) || !std::isfinite(c)) throw ArgumentError("scale for group " + scales.groups[j] + " must be positive");
    bool found = false;
    for (auto& b : model.blocks()) {
      if (b.group != scales.groups[j] || (b.kind != ParamKind::kWeight && b.kind != ParamKind::kBias)) continue;
      found = true;
      for (double& v : b.value.values()) v *= c;
    }
    if (!found) throw ArgumentError("model has no parameter group " + scales.groups[j]);
  }
}

}  // namespace splab
