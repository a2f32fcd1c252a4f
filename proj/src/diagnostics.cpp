#include "splab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "splab/error.hpp"

namespace splab {

void ProbeConfig::validate() const {
  if (every == 0) throw ConfigError("probes.every must be >= 1");
  if (batch == 0) throw ConfigError("probes.batch must be >= 1");
  if (!(act_eps > 0.0)) throw ConfigError("probes.act_eps must be positive");
  if (eig_count < 1 || eig_count > 5) throw ConfigError("probes.eig_count must lie in [1,5]");
  if (power_iters == 0) throw ConfigError("probes.power_iters must be >= 1");
  if (!(tol > 0.0)) throw ConfigError("probes.tol must be positive");
  if (grid_n % 2 == 0) throw ConfigError("probes.grid_n must be odd");
  if (!(span >= 0.0)) throw ConfigError("probes.span must be non-negative");
}

std::vector<double> activation_sparsity(const std::vector<Tensor>& activations, double eps) {
  std::vector<double> out;
  out.reserve(activations.size());
  for (const auto& a : activations) {
    const auto zeros = std::count_if(a.values().begin(), a.values().end(), [&](double v) { return std::abs(v) < eps; });
    out.push_back(static_cast<double>(zeros) / static_cast<double>(a.size()));
  }
  return out;
}

std::vector<double> activation_sparsity(const Model& model, const Tensor& x, double eps, const ForwardOptions& opts) {
  if (x.dim(0) == 0) throw ArgumentError("activation sparsity needs a non-empty batch");
  const Tensor dummy({x.dim(0), model.spec().classes}, 1.0 / static_cast<double>(model.spec().classes));
  return activation_sparsity(model.evaluate(x, dummy, opts, false, true).activations, eps);
}

double avg_gradient_flow(std::span<const double> grads, std::span<const double> free) {
  if (grads.size() != free.size()) throw ArgumentError("gradient and mask lengths differ");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (free[i] != 0.0) {
      acc += std::abs(grads[i]);
      ++n;
    }
  if (n == 0) throw ArgumentError("average gradient flow over an empty unmasked set");
  return acc / static_cast<double>(n);
}

double avg_gradient_flow(const Model& model, const std::vector<Tensor>& grads) {
  if (grads.size() != model.blocks().size()) throw ArgumentError("one gradient per parameter block expected");
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t b = 0; b < grads.size(); ++b) {
    const ParamBlock& pb = model.blocks()[b];
    if (!pb.maskable()) continue;
    for (std::size_t i = 0; i < pb.value.size(); ++i)
      if (!pb.masked(i)) {
        acc += std::abs(grads[b][i]);
        ++n;
      }
  }
  if (n == 0) throw ArgumentError("average gradient flow over an empty unmasked set");
  return acc / static_cast<double>(n);
}

bool SpectrumRecord::all_converged() const {
  return std::all_of(converged.begin(), converged.end(), [](bool c) { return c; });
}

namespace {

void project(std::vector<double>& v, std::span<const double> free) {
  if (free.empty()) return;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (free[i] == 0.0) v[i] = 0.0;
}

void orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (const auto& b : basis) {
    const double c = dot(v, b);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * b[i];
  }
}

bool normalize(std::vector<double>& v) {
  const double n = l2_norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) return false;
  for (double& x : v) x /= n;
  return true;
}

}  // namespace

SpectrumRecord top_hessian_eigs(const GradientFn& grad, std::span<const double> params, const PowerOptions& opts,
                                std::span<const double> free) {
  if (opts.k == 0) throw ArgumentError("need k >= 1 eigenvalues");
  if (!free.empty() && free.size() != params.size()) throw ArgumentError("free mask length differs from parameters");
  const std::size_t dim = free.empty() ? params.size()
                                       : static_cast<std::size_t>(std::count_if(free.begin(), free.end(),
                                                                                [](double f) { return f != 0.0; }));
  if (opts.k > dim) throw ArgumentError("more eigenvalues requested than free coordinates");

  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // Deflated power iteration on H + shift*I; eigenvalues are reported unshifted.
  auto iterate = [&](double shift, std::size_t k) {
    SpectrumRecord rec;
    for (std::size_t j = 0; j < k; ++j) {
      std::vector<double> v(params.size());
      do {
        for (double& x : v) x = gauss(rng);
        project(v, free);
        orthogonalize(v, rec.eigenvectors);
      } while (!normalize(v));

      double lambda = 0.0, residual = std::numeric_limits<double>::infinity();
      for (std::size_t it = 0; it < opts.iters; ++it) {
        std::vector<double> w = hvp_finite_diff(grad, params, v, opts.h);
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += shift * v[i];
        project(w, free);
        orthogonalize(w, rec.eigenvectors);
        const double mu = dot(v, w);
        lambda = mu - shift;
        double r2 = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) r2 += (w[i] - mu * v[i]) * (w[i] - mu * v[i]);
        residual = std::sqrt(r2) / std::max(std::abs(lambda), 1e-300);
        if (!std::isfinite(lambda)) throw NumericError("non-finite Hessian-vector product in power iteration");
        if (residual <= opts.tol) break;
        if (!normalize(w)) break;  // v lies in the null space
        v = std::move(w);
      }
      rec.eigenvalues.push_back(lambda);
      rec.residuals.push_back(residual);
      rec.converged.push_back(residual <= opts.tol);
      rec.eigenvectors.push_back(std::move(v));
    }
    return rec;
  };

  // Plain power iteration finds the largest |lambda|. Unless that is already the
  // single top eigenvalue, shift by it so the spectrum is nonnegative and the
  // magnitude order equals the algebraic order.
  SpectrumRecord rec = iterate(0.0, 1);
  if (opts.k > 1 || rec.eigenvalues[0] < 0.0) rec = iterate(std::abs(rec.eigenvalues[0]), opts.k);

  std::vector<std::size_t> order(opts.k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rec.eigenvalues[a] > rec.eigenvalues[b]; });
  SpectrumRecord sorted;
  for (auto i : order) {
    sorted.eigenvalues.push_back(rec.eigenvalues[i]);
    sorted.residuals.push_back(rec.residuals[i]);
    sorted.converged.push_back(rec.converged[i]);
    sorted.eigenvectors.push_back(std::move(rec.eigenvectors[i]));
  }
  return sorted;
}

ModelObjective::ModelObjective(const Model& m, Tensor x_, Tensor target_, ForwardOptions o)
    : model(std::make_shared<Model>(m)), x(std::move(x_)), target(std::move(target_)), opts(o) {}

double ModelObjective::loss(std::span<const double> theta) const {
  model->set_flat_values(theta);
  return model->evaluate(x, target, opts, false).loss;
}

std::vector<double> ModelObjective::grad(std::span<const double> theta) const {
  model->set_flat_values(theta);
  return Model::flatten(model->evaluate(x, target, opts, true).grads);
}

ScalarFn ModelObjective::loss_fn() const {
  return [self = *this](std::span<const double> t) { return self.loss(t); };
}

GradientFn ModelObjective::grad_fn() const {
  return [self = *this](std::span<const double> t) { return self.grad(t); };
}

SpectrumRecord top_hessian_eigs(const Model& model, const Tensor& x, const Tensor& target, const PowerOptions& opts,
                                const ForwardOptions& fwd) {
  const ModelObjective obj(model, x, target, fwd);
  const auto theta = model.flat_values();
  const auto free = model.flat_free();
  return top_hessian_eigs(obj.grad_fn(), theta, opts, free);
}

std::vector<double> eigvec_perturb_scan(const ScalarFn& loss, std::span<const double> params,
                                        std::span<const double> direction, std::span<const double> distances,
                                        std::span<const double> free) {
  if (direction.size() != params.size()) throw ArgumentError("direction length differs from parameters");
  std::vector<double> d(direction.begin(), direction.end());
  project(d, free);
  if (!normalize(d)) throw ArgumentError("perturbation direction vanishes on the free coordinates");
  std::vector<double> out;
  out.reserve(distances.size());
  std::vector<double> probe(params.size());
  for (double t : distances) {
    for (std::size_t i = 0; i < params.size(); ++i) probe[i] = params[i] + t * d[i];
    out.push_back(t == 0.0 ? loss(params) : loss(probe));
  }
  return out;
}

std::vector<double> eigvec_perturb_scan(const Model& model, const Tensor& x, const Tensor& target,
                                        std::span<const double> direction, std::span<const double> distances,
                                        const ForwardOptions& fwd) {
  const ModelObjective obj(model, x, target, fwd);
  const auto theta = model.flat_values();
  const auto free = model.flat_free();
  return eigvec_perturb_scan(obj.loss_fn(), theta, direction, distances, free);
}

std::vector<std::vector<double>> landscape_directions(const Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  for (int k = 0; k < 2; ++k) {
    std::vector<double> d;
    d.reserve(model.parameter_count());
    for (const auto& b : model.blocks()) {
      const std::size_t off = d.size();
      d.resize(off + b.value.size(), 0.0);
      if (!b.maskable()) continue;
      for (std::size_t i = 0; i < b.value.size(); ++i) {
        const double g = gauss(rng);
        d[off + i] = b.masked(i) ? 0.0 : g;
      }
      // A filter is one output unit: a column of a dense (in, out) weight or
      // one leading slice of a conv (out, in, 3, 3) weight.
      const Shape& s = b.value.shape();
      const bool dense = s.size() == 2;
      const std::size_t filters = dense ? s[1] : s[0];
      const std::size_t per = b.value.size() / filters;
      auto index = [&](std::size_t f, std::size_t e) { return dense ? e * filters + f : f * per + e; };
      for (std::size_t f = 0; f < filters; ++f) {
        double dn = 0.0, tn = 0.0;
        for (std::size_t e = 0; e < per; ++e) {
          const std::size_t i = index(f, e);
          dn += d[off + i] * d[off + i];
          tn += b.value[i] * b.value[i];
        }
        const double scale = dn > 0.0 ? std::sqrt(tn / dn) : 0.0;
        for (std::size_t e = 0; e < per; ++e) d[off + index(f, e)] *= scale;
      }
    }
    dirs.push_back(std::move(d));
  }
  const double n1 = dot(dirs[0], dirs[0]);
  if (n1 > 0.0) {
    const double c = dot(dirs[0], dirs[1]) / n1;
    for (std::size_t i = 0; i < dirs[1].size(); ++i) dirs[1][i] -= c * dirs[0][i];
  }
  return dirs;
}

LandscapeGrid landscape_slice(const Model& model, const Tensor& x, const Tensor& target, std::size_t grid_n,
                              double span, std::uint64_t seed, const ForwardOptions& fwd) {
  if (grid_n == 0 || grid_n % 2 == 0) throw ArgumentError("landscape grid size must be odd");
  if (!(span >= 0.0)) throw ArgumentError("landscape span must be non-negative");
  const auto dirs = landscape_directions(model, seed);
  const ModelObjective obj(model, x, target, fwd);
  const auto theta = model.flat_values();

  LandscapeGrid grid;
  grid.n = grid_n;
  grid.span = span;
  grid.direction_dot = dot(dirs[0], dirs[1]);
  const double half = static_cast<double>(grid_n - 1);
  for (std::size_t i = 0; i < grid_n; ++i)
    grid.coords.push_back(grid_n == 1 ? 0.0 : span * (2.0 * static_cast<double>(i) - half) / half);
  grid.baseline = obj.loss(theta);
  std::vector<double> probe(theta.size());
  for (std::size_t i = 0; i < grid_n; ++i)
    for (std::size_t j = 0; j < grid_n; ++j) {
      const double a = grid.coords[i], b = grid.coords[j];
      if (a == 0.0 && b == 0.0) {
        grid.loss.push_back(grid.baseline);
        continue;
      }
      for (std::size_t p = 0; p < theta.size(); ++p) probe[p] = theta[p] + a * dirs[0][p] + b * dirs[1][p];
      grid.loss.push_back(obj.loss(probe));
    }
  return grid;
}

}  // namespace splab
