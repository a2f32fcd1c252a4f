#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splab/dataset.hpp"
#include "splab/diagnostics.hpp"
#include "splab/ghost.hpp"
#include "splab/masks.hpp"
#include "splab/model.hpp"
#include "splab/rescale.hpp"

namespace splab {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 2e-4;
  std::vector<std::size_t> milestones{30, 45};
  double ls_alpha = 0.0;  ///< effective smoothing ratio; 0 trains on one-hot targets
  std::uint64_t seed = 0;
  bool gsk = false;
  bool gsw = false;
  GhostConfig ghost;
  bool lrsi = false;
  RescaleOptions rescale;
  ProbeConfig probes;
  double divergence_loss = 1e6;

  void validate() const;
};

struct RunRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double grad_flow = 0.0;
  std::vector<double> act_sparsity;  ///< empty on epochs without probes
  std::vector<double> top_eigs;
};

struct TrainResult {
  std::vector<RunRecord> history;
  std::vector<SpectrumRecord> spectra;
  std::optional<ScaleSet> scales;
  bool diverged = false;
  std::string diagnostic;
  /// max |pswish(x, beta_max) - relu(x)| on the probe batch at the ReLU swap; NaN when no swap happened.
  double swap_deviation = std::numeric_limits<double>::quiet_NaN();
};

std::vector<double> smooth_labels(std::size_t target_class, std::size_t classes, double ls_alpha);
/// (N, K) smoothed target rows.
Tensor smooth_targets(std::span<const std::size_t> labels, std::size_t classes, double ls_alpha);
/// Mean softmax cross-entropy of (N, K) logits against a target distribution.
double cross_entropy(const Tensor& logits, const Tensor& target);

/// g' = m (g + wd theta); v = momentum v + g'; theta -= lr v, on every block.
void sgd_step(std::vector<ParamBlock>& blocks, const std::vector<Tensor>& grads, double lr, double momentum,
              double weight_decay);

/// lr0 / 10 per milestone <= epoch.
double lr_at(std::size_t epoch, double lr0, std::span<const std::size_t> milestones);

double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg);
TrainResult train(Model& model, const Mask& mask, const Dataset& data, const TrainConfig& cfg);

}  // namespace splab
