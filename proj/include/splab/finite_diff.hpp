#pragma once

#include <functional>
#include <span>
#include <vector>

namespace splab {

using ScalarFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> params, double h = 1e-5);

/// Hessian-vector product from two gradient evaluations:
/// (grad(x + h'v) - grad(x - h'v)) / 2h' with h' = h (1 + |x|) / |v|.
std::vector<double> hvp_finite_diff(const GradientFn& grad, std::span<const double> params,
                                    std::span<const double> v, double h = 1e-5);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
/// |a - b| / max(|b|, floor), in the l2 norm.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12);

}  // namespace splab
