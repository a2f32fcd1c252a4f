#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "splab/finite_diff.hpp"
#include "splab/model.hpp"

namespace splab {

struct RescaleOptions {
  std::size_t iters = 50;
  double step = 0.05;     ///< gradient step in log-scale space
  double fd_step = 1e-3;  ///< central-difference step in log-scale space
  double c_min = 0.01;
  double c_max = 100.0;
  std::size_t batch = 128;

  void validate() const;
};

/// One positive coefficient per layer group (a weight and its bias share one).
struct ScaleSet {
  std::vector<std::string> groups;
  std::vector<double> scales;
  std::vector<double> trace;  ///< objective after each iteration
  double initial_objective = 0.0;
  double final_objective = 0.0;
};

/// L(theta - lr * (free * grad L(theta))) for a generic loss.
double first_step_loss(const ScalarFn& loss, const GradientFn& grad, std::span<const double> theta,
                       std::span<const double> free, double lr);
/// Same on a model and fixed batch, in train-mode BN; the model is not modified.
double first_step_loss(const Model& model, const Tensor& x, const Tensor& target, double lr,
                       const ForwardOptions& opts = {});

using ScaleObjective = std::function<double(std::span<const double> scales)>;

/// Log-space finite-difference descent from c = 1, clamped to the bounds;
/// returns the best coefficients seen, so final <= initial.
ScaleSet learn_scales(const ScaleObjective& objective, std::vector<std::string> groups, const RescaleOptions& opts);
ScaleSet learn_scales(const Model& model, const Tensor& x, const Tensor& target, double lr,
                      const RescaleOptions& opts, const ForwardOptions& fwd = {});

/// Multiplies every block of each group (weights and biases) by its coefficient.
void apply_scales(Model& model, const ScaleSet& scales);

}  // namespace splab
