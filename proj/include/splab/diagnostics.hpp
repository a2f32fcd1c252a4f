#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "splab/finite_diff.hpp"
#include "splab/model.hpp"

namespace splab {

struct ProbeConfig {
  bool enabled = false;
  std::size_t every = 5;    ///< probe epochs e with e % every == 0, plus the last epoch
  std::size_t batch = 512;  ///< probe batch: first examples of the training split
  double act_eps = 1e-6;
  bool spectrum = true;
  std::size_t eig_count = 1;
  std::size_t power_iters = 100;
  double tol = 1e-3;
  std::size_t grid_n = 11;
  double span = 1.0;

  void validate() const;
  bool due(std::size_t epoch, std::size_t epochs) const noexcept {
    return enabled && (epoch % every == 0 || epoch + 1 == epochs);
  }
};

/// Fraction of |a| < eps per activation tensor.
std::vector<double> activation_sparsity(const std::vector<Tensor>& activations, double eps);
std::vector<double> activation_sparsity(const Model& model, const Tensor& x, double eps, const ForwardOptions& opts);

/// Mean |g| over coordinates with free[i] != 0; ArgumentError when none are free.
double avg_gradient_flow(std::span<const double> grads, std::span<const double> free);
/// Same over the weight blocks of `model`, skipping masked coordinates.
double avg_gradient_flow(const Model& model, const std::vector<Tensor>& grads);

struct SpectrumRecord {
  std::size_t epoch = 0;
  std::vector<double> eigenvalues;  ///< descending
  std::vector<double> residuals;    ///< |Hv - lambda v| / |lambda|
  std::vector<bool> converged;
  std::vector<std::vector<double>> eigenvectors;

  bool all_converged() const;
};

struct PowerOptions {
  std::size_t k = 1;
  std::size_t iters = 100;
  double tol = 1e-3;
  double h = 1e-5;
  std::uint64_t seed = 0;
};

/// Largest k eigenvalues (algebraic, not by magnitude) by power iteration on
/// finite-difference Hessian-vector products with Gram-Schmidt deflation. When `free` is given, vectors live in the subspace
/// of free coordinates (masked weights never move).
SpectrumRecord top_hessian_eigs(const GradientFn& grad, std::span<const double> params, const PowerOptions& opts,
                                std::span<const double> free = {});

/// Loss and gradient of a frozen copy of `model` as functions of its flat parameters.
struct ModelObjective {
  std::shared_ptr<Model> model;
  Tensor x;
  Tensor target;
  ForwardOptions opts;

  ModelObjective(const Model& m, Tensor x_, Tensor target_, ForwardOptions o);
  double loss(std::span<const double> theta) const;
  std::vector<double> grad(std::span<const double> theta) const;
  ScalarFn loss_fn() const;
  GradientFn grad_fn() const;
};

SpectrumRecord top_hessian_eigs(const Model& model, const Tensor& x, const Tensor& target, const PowerOptions& opts,
                                const ForwardOptions& fwd);

/// Loss at theta + t d for each t; d is zeroed off the free set and normalized.
std::vector<double> eigvec_perturb_scan(const ScalarFn& loss, std::span<const double> params,
                                        std::span<const double> direction, std::span<const double> distances,
                                        std::span<const double> free = {});
std::vector<double> eigvec_perturb_scan(const Model& model, const Tensor& x, const Tensor& target,
                                        std::span<const double> direction, std::span<const double> distances,
                                        const ForwardOptions& fwd);

struct LandscapeGrid {
  std::size_t n = 0;
  double span = 0.0;
  std::vector<double> coords;  ///< n values in [-span, span], middle one exactly 0
  std::vector<double> loss;    ///< row-major, loss[i * n + j] at (coords[i], coords[j])
  double baseline = 0.0;
  double direction_dot = 0.0;  ///< <d1, d2> after orthogonalization

  double at(std::size_t i, std::size_t j) const { return loss[i * n + j]; }
};

/// Two seeded Gaussian directions, filter-normalized per output unit/channel,
/// zero on biases, BN parameters and masked weights, d2 orthogonalized against d1.
std::vector<std::vector<double>> landscape_directions(const Model& model, std::uint64_t seed);
LandscapeGrid landscape_slice(const Model& model, const Tensor& x, const Tensor& target, std::size_t grid_n,
                              double span, std::uint64_t seed, const ForwardOptions& fwd);

}  // namespace splab
