#include "splab/finite_diff.hpp"

#include <cmath>
#include <string>

#include "splab/error.hpp"

namespace splab {

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("dot of vectors with different lengths");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  if (a.size() != b.size()) throw ArgumentError("relative_error of vectors with different lengths");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(diff) / std::max(l2_norm(b), floor);
}

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double h) {
  if (!(h > 0.0)) throw ArgumentError("finite-difference step must be positive");
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw OverflowError("non-finite function value at coordinate " + std::to_string(i));
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

std::vector<double> hvp_finite_diff(const GradientFn& grad, std::span<const double> params,
                                    std::span<const double> v, double h) {
  if (v.size() != params.size()) throw ArgumentError("direction length does not match parameter count");
  const double vn = l2_norm(v);
  if (!(vn > 0.0)) throw ArgumentError("Hessian-vector product needs a nonzero direction");
  const double step = h * (1.0 + l2_norm(params)) / vn;
  std::vector<double> x(params.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = params[i] + step * v[i];
  const std::vector<double> gp = grad(x);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = params[i] - step * v[i];
  const std::vector<double> gm = grad(x);
  if (gp.size() != x.size() || gm.size() != x.size()) throw ShapeError("gradient length does not match parameters");
  std::vector<double> hv(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    hv[i] = (gp[i] - gm[i]) / (2.0 * step);
    if (!std::isfinite(hv[i])) throw OverflowError("non-finite Hessian-vector product");
  }
  return hv;
}

}  // namespace splab
