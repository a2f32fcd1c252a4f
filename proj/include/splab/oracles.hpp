#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "splab/finite_diff.hpp"

namespace splab {

struct OracleCheck {
  std::string name;
  double error = 0.0;      ///< worst relative error observed
  double tolerance = 0.0;
  bool pass = false;
};

/// Hessian of f from second central differences of f itself (no gradients).
std::vector<std::vector<double>> dense_hessian(const ScalarFn& f, std::span<const double> x, double h = 1e-4);
/// Eigenvalues of a symmetric matrix, descending.
std::vector<double> symmetric_eigenvalues(const std::vector<std::vector<double>>& m);
/// The k largest eigenvalues in descending order.
std::vector<double> top_eigenvalues(const std::vector<std::vector<double>>& m, std::size_t k);

/// Autodiff against central differences for every differentiable op, `points` random inputs each.
std::vector<OracleCheck> op_gradient_checks(std::uint64_t seed, std::size_t points = 20, double tol = 1e-6);
/// Full-model gradients (mlp, mlp with ghosts and soft neurons, small residual net).
std::vector<OracleCheck> model_gradient_checks(std::uint64_t seed, double tol = 1e-6);
/// hvp_finite_diff and top_hessian_eigs against the dense Hessian of <= 20-parameter models.
std::vector<OracleCheck> hessian_checks(std::uint64_t seed, double tol = 1e-3);

}  // namespace splab
