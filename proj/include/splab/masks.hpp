#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splab/dataset.hpp"
#include "splab/finite_diff.hpp"
#include "splab/model.hpp"

namespace splab {

struct TrainConfig;

enum class MaskScope { kGlobal, kLayerwise };
enum class MaskAlgo { kRandom, kMagnitude, kSnip, kGrasp, kSynflow, kLth };

std::string_view mask_scope_name(MaskScope s);
MaskScope parse_mask_scope(std::string_view name);
std::string_view mask_algo_name(MaskAlgo a);
MaskAlgo parse_mask_algo(std::string_view name);

struct MaskBlock {
  std::string name;  ///< weight block name
  std::vector<std::uint8_t> keep;

  std::size_t survivors() const;
};

/// Binary keep-arrays for every maskable (weight) block of a model, in block order.
struct Mask {
  std::vector<MaskBlock> blocks;
  double target_sparsity = 0.0;
  std::vector<std::string> warnings;

  std::size_t total() const;
  std::size_t survivors() const;
  double sparsity() const;
  const MaskBlock* find(std::string_view name) const;
};

struct SaliencyScores {
  std::string criterion;
  std::vector<std::string> names;           ///< weight block names, block order
  std::vector<std::vector<double>> values;  ///< congruent to the blocks
};

/// Survivors for sparsity s over n weights: round((1 - s) n).
std::size_t keep_count(std::size_t n, double s);

/// Keeps round((1-s) N) entries ranked by score (largest first unless
/// `keep_largest` is false). Ties go to the lower (block name, flat index).
/// With `eligible`, entries outside it are never kept. Layerwise scope gives
/// each block its proportional share (largest-remainder rounding).
Mask select_mask(const SaliencyScores& scores, double s, MaskScope scope, bool keep_largest = true,
                 const Mask* eligible = nullptr);

Mask dense_mask(const Model& model);
/// The masks currently stored in the model (dense blocks read as all ones).
Mask model_mask(const Model& model);

Mask random_mask(const Model& model, double s, std::uint64_t seed, MaskScope scope = MaskScope::kGlobal);

SaliencyScores magnitude_scores(const Model& model);
Mask magnitude_mask(const Model& model, double s, MaskScope scope = MaskScope::kGlobal);

/// |theta * grad| elementwise.
std::vector<double> snip_saliency(std::span<const double> theta, std::span<const double> grad);
SaliencyScores snip_scores(const Model& model, const Batch& batch);
Mask snip_mask(const Model& model, const Batch& batch, double s, MaskScope scope = MaskScope::kGlobal);

/// GraSP scores are theta * (H g); the highest scores are pruned. Flipping this
/// constant keeps the highest instead.
inline constexpr bool kGraspPruneLargest = true;
std::vector<double> grasp_saliency(const GradientFn& grad, std::span<const double> theta, double h = 1e-5);
SaliencyScores grasp_scores(const Model& model, const Batch& batch);
Mask grasp_mask(const Model& model, const Batch& batch, double s, MaskScope scope = MaskScope::kGlobal);

/// One synaptic-flow scoring pass with |theta| (masked entries zero), BN as
/// identity and an all-ones input: score = |theta| * dR/d|theta|, R = sum(logits).
SaliencyScores synflow_scores(const Model& model);
/// Iterative pruning: round k targets 1 - (1-s)^(k/iterations); a layer that
/// empties before the last round adds a warning to the mask.
Mask synflow_mask(const Model& model, double s, std::size_t iterations = 100, MaskScope scope = MaskScope::kGlobal);

struct LotteryTicket {
  Mask mask;
  Model rewound;  ///< initial parameters with the final mask applied
};
/// Iterative magnitude pruning: each round trains from the rewound
/// initialization and prunes `rate` of the survivors by global magnitude.
LotteryTicket imp_lth(const Model& init, const Dataset& data, std::size_t rounds, double rate,
                      const TrainConfig& cfg, MaskScope scope = MaskScope::kGlobal);

/// Zeroes masked weights and momentum and stores the mask in the model.
void apply_mask(Model& model, const Mask& mask);

struct CollapseReport {
  std::vector<std::pair<std::string, std::size_t>> survivors;  ///< per weight block
  std::vector<std::string> empty_layers;
  std::size_t total_survivors = 0;
  bool collapsed = false;
};
CollapseReport layer_collapse_check(const Mask& mask);

}  // namespace splab
