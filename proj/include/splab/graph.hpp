#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "splab/tensor.hpp"

namespace splab {

using NodeId = std::size_t;
using NamedTensors = std::map<std::string, Tensor, std::less<>>;

enum class OpKind {
  kInput,
  kConstant,
  kMatMul,
  kAdd,
  kMul,
  kConv2d,
  kBatchNorm,
  kRelu,
  kPSwish,
  kMish,
  kGlobalAvgPool,
  kReshape,
  kSum,
  kSoftmaxCrossEntropy,
};

std::string_view op_name(OpKind kind);

enum class BatchNormMode { kTrain, kEval };

inline constexpr double kBatchNormEps = 1e-5;

/// Recorded computation graph over dense f64 tensors.
///
/// Nodes are appended in construction order, which is also the topological
/// order: an op can only reference nodes that already exist. Named input
/// nodes are bound by forward(); backward() then propagates a seed from the
/// root (the most recently added node unless set_root() says otherwise) and
/// accumulates gradients on every node that requires them.
class Graph {
 public:
  NodeId input(std::string name, bool requires_grad = false);
  NodeId constant(Tensor value);

  NodeId matmul(NodeId a, NodeId b);
  /// Same shapes, a size-1 `b`, or a rank-1 `b` broadcast along axis 1 of `a`.
  NodeId add(NodeId a, NodeId b);
  /// Same shapes or a size-1 `b`.
  NodeId mul(NodeId a, NodeId b);
  /// 3x3 kernel, zero padding 1. `x` is (N,C,H,W), `w` is (O,C,3,3), bias (O).
  NodeId conv2d(NodeId x, NodeId w, std::optional<NodeId> bias, int stride);
  /// Normalizes over every axis except 1. Eval mode reads the given running stats.
  NodeId batchnorm(NodeId x, NodeId gamma, NodeId shift, BatchNormMode mode,
                   const Tensor* running_mean = nullptr, const Tensor* running_var = nullptr);
  NodeId relu(NodeId x);
  NodeId pswish(NodeId x, double beta);
  NodeId mish(NodeId x);
  NodeId global_avg_pool(NodeId x);
  /// Reshape keeping the leading axis: (N, ...) -> (N, prod(...)) when `shape` is empty.
  NodeId reshape(NodeId x, Shape shape = {});
  NodeId sum(NodeId x);
  /// Mean over the batch of -sum_k target_k * log softmax(logits)_k.
  NodeId softmax_cross_entropy(NodeId logits, NodeId target);

  void set_root(NodeId id);
  NodeId root() const;
  void mark_output(std::string name, NodeId id);

  /// Binds every input node by name and evaluates all nodes. Returns the
  /// tensors registered with mark_output().
  NamedTensors forward(const NamedTensors& inputs);
  /// Seeds the root with `seed` and returns the gradient of every input node
  /// declared with requires_grad, keyed by input name.
  NamedTensors backward(const Tensor& seed);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(NodeId id) const { return node(id).kind; }
  std::string label(NodeId id) const;
  const Tensor& value(NodeId id) const;
  /// Gradient of a node after backward(); zeros when nothing flowed into it.
  const Tensor& grad(NodeId id) const;
  bool forwarded() const noexcept { return forwarded_; }

  struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  ///< unbiased, as used for running-stat updates
  };
  /// Batch statistics computed by a train-mode batchnorm node in the last forward().
  BatchStats batch_stats(NodeId id) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    std::string name;
    bool requires_grad = false;
    Tensor value;
    Tensor grad;
    // attributes
    double beta = 0.0;
    int stride = 1;
    Shape shape_attr;
    BatchNormMode bn_mode = BatchNormMode::kTrain;
    Tensor running_mean;
    Tensor running_var;
    // saved for backward
    std::vector<double> saved;
    std::vector<double> saved2;
    std::vector<double> saved3;
    std::vector<double> saved4;
  };

  NodeId push(Node n);
  const Node& node(NodeId id) const;
  void eval_node(NodeId id);
  void backprop_node(NodeId id);
  [[noreturn]] void shape_fail(NodeId id, const std::string& msg) const;

  std::vector<Node> nodes_;
  std::map<std::string, NodeId, std::less<>> outputs_;
  std::optional<NodeId> root_;
  bool forwarded_ = false;
  bool backwarded_ = false;
};

}  // namespace splab
