#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splab/graph.hpp"
#include "splab/tensor.hpp"

namespace splab {

enum class ActivationKind { kRelu, kPSwish, kMish };

std::string_view activation_name(ActivationKind kind);
ActivationKind parse_activation(std::string_view name);

/// An activation choice; `beta` only matters for PSwish and must be > 0 there.
struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  double beta = 1.0;
};

enum class LayerKind { kDense, kConv3x3, kBatchNorm, kActivation, kResidualBlock, kGlobalPool };

std::string_view layer_name(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t width = 0;  ///< dense units or conv/residual output channels
  int stride = 1;
  ActivationKind activation = ActivationKind::kRelu;
  bool has_native_skip = true;  ///< residual blocks only
  bool projection = true;       ///< residual blocks: 3x3 conv+BN shortcut when shapes change

  static LayerSpec dense(std::size_t units) { return {.kind = LayerKind::kDense, .width = units}; }
  static LayerSpec conv(std::size_t channels, int stride = 1) {
    return {.kind = LayerKind::kConv3x3, .width = channels, .stride = stride};
  }
  static LayerSpec batchnorm() { return {.kind = LayerKind::kBatchNorm}; }
  static LayerSpec act(ActivationKind kind = ActivationKind::kRelu) {
    return {.kind = LayerKind::kActivation, .activation = kind};
  }
  static LayerSpec residual(std::size_t channels, int stride = 1) {
    return {.kind = LayerKind::kResidualBlock, .width = channels, .stride = stride};
  }
  static LayerSpec global_pool() { return {.kind = LayerKind::kGlobalPool}; }
};

struct ModelSpec {
  std::string name;
  Shape input_shape;  ///< per example: {features} or {channels, height, width}
  std::size_t classes = 0;
  std::vector<LayerSpec> layers;
};

/// Dense ReLU network input -> hidden... -> classes. Optional BN after each hidden dense.
ModelSpec mlp_preset(std::size_t input_dim, std::vector<std::size_t> hidden, std::size_t classes,
                     bool batchnorm = false);
/// Stem conv(8) + BN + ReLU, residual blocks of 8/16/32 channels (stride 2 between), GAP, dense.
ModelSpec resnet_tiny_preset(Shape input_shape, std::size_t classes);

enum class ParamKind { kWeight, kBias, kBnScale, kBnShift };

/// Named trainable array with optional binary mask and momentum buffer.
struct ParamBlock {
  std::string name;
  ParamKind kind = ParamKind::kWeight;
  std::string group;  ///< owning layer; a weight and its bias share the group
  std::size_t fan_in = 0;
  Tensor value;
  std::vector<std::uint8_t> mask;  ///< empty means dense
  std::vector<double> momentum;

  bool maskable() const noexcept { return kind == ParamKind::kWeight; }
  bool masked(std::size_t i) const noexcept { return !mask.empty() && mask[i] == 0; }
};

/// Position where a gated identity shortcut can be added before an activation.
struct GhostSite {
  std::size_t layer = 0;
  int sub = -1;  ///< sub-block inside a residual block (0 or 1), -1 for sequential layers
  Shape shape;   ///< per-example shape at the site
  std::string describe() const;
};

struct RunningStats {
  Tensor mean;
  Tensor var;
};

/// How a forward pass differs from the plain backbone.
struct ForwardOptions {
  std::optional<Activation> replace_relu;  ///< soft-neuron substitute for native ReLU layers
  double ghost_alpha = 0.0;                ///< gate on ghost shortcuts; 0 removes them from the graph
  BatchNormMode bn_mode = BatchNormMode::kTrain;
  bool bn_passthrough = false;  ///< treat every batchnorm as identity
};

class Model;

/// Node ids of a model expression recorded into a Graph.
struct ModelGraph {
  NodeId input = 0;
  NodeId logits = 0;
  std::vector<NodeId> params;       ///< aligned with Model::blocks()
  std::vector<NodeId> activations;  ///< every activation output, in forward order
  std::vector<NodeId> pre_activations;
  std::vector<std::pair<std::string, NodeId>> batchnorms;
};

class Model {
 public:
  struct Evaluation {
    double loss = 0.0;
    Tensor logits;
    std::vector<Tensor> grads;        ///< aligned with blocks(); empty unless requested
    std::vector<Tensor> activations;  ///< empty unless requested
    std::vector<Tensor> pre_activations;
  };

  const ModelSpec& spec() const noexcept { return spec_; }
  std::vector<ParamBlock>& blocks() noexcept { return blocks_; }
  const std::vector<ParamBlock>& blocks() const noexcept { return blocks_; }
  ParamBlock& block(std::string_view name);
  const ParamBlock& block(std::string_view name) const;
  std::optional<std::size_t> find_block(std::string_view name) const;
  const std::vector<GhostSite>& ghost_sites() const noexcept { return ghost_sites_; }
  std::map<std::string, RunningStats>& running_stats() noexcept { return running_; }
  const std::map<std::string, RunningStats>& running_stats() const noexcept { return running_; }

  std::size_t parameter_count() const;
  std::size_t maskable_count() const;
  /// Number of activation layers a forward pass records.
  std::size_t activation_count() const;
  /// Layer-group names in block order (one per dense/conv layer).
  std::vector<std::string> groups() const;

  /// Records the model into `g` reading the input node `x`.
  ModelGraph build(Graph& g, NodeId x, const ForwardOptions& opts, bool requires_grad) const;
  /// Current parameter values keyed by block name.
  NamedTensors bindings() const;

  Tensor predict(const Tensor& x, const ForwardOptions& opts) const;
  /// Cross-entropy of the logits against a target distribution (N, K).
  Evaluation evaluate(const Tensor& x, const Tensor& target, const ForwardOptions& opts, bool want_grads,
                      bool want_activations = false) const;
  /// Same as evaluate() in train mode, then folds the batch statistics into the running stats.
  Evaluation train_step_eval(const Tensor& x, const Tensor& target, const ForwardOptions& opts);

  std::vector<double> flat_values() const;
  void set_flat_values(std::span<const double> values);
  /// 1 for every coordinate that may move, 0 for masked weights.
  std::vector<double> flat_free() const;
  static std::vector<double> flatten(const std::vector<Tensor>& tensors);

 private:
  friend Model build_model(const ModelSpec& spec, std::uint64_t seed);

  ModelSpec spec_;
  std::vector<ParamBlock> blocks_;
  std::vector<GhostSite> ghost_sites_;
  std::map<std::string, RunningStats> running_;
};

/// Validates the layer chain, initializes parameters (fan-in scaled normal,
/// std sqrt(2 / fan_in); BN scale 1, shift 0) and enumerates ghost sites.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Standalone residual block evaluation for a single block description.
Tensor residual_block_forward(const Model& model, std::size_t layer, const Tensor& x, double alpha,
                              const ForwardOptions& opts);

inline constexpr double kBatchNormMomentum = 0.1;

}  // namespace splab
