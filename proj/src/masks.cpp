#include "splab/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "splab/error.hpp"
#include "splab/trainer.hpp"

namespace splab {

std::string_view mask_scope_name(MaskScope s) { return s == MaskScope::kGlobal ? "global" : "layerwise"; }

MaskScope parse_mask_scope(std::string_view name) {
  if (name == "global") return MaskScope::kGlobal;
  if (name == "layerwise") return MaskScope::kLayerwise;
  throw ConfigError("unknown mask scope '" + std::string(name) + "'");
}

std::string_view mask_algo_name(MaskAlgo a) {
  switch (a) {
    case MaskAlgo::kRandom: return "random";
    case MaskAlgo::kMagnitude: return "magnitude";
    case MaskAlgo::kSnip: return "snip";
    case MaskAlgo::kGrasp: return "grasp";
    case MaskAlgo::kSynflow: return "synflow";
    case MaskAlgo::kLth: return "lth";
  }
  return "?";
}

MaskAlgo parse_mask_algo(std::string_view name) {
  for (auto a : {MaskAlgo::kRandom, MaskAlgo::kMagnitude, MaskAlgo::kSnip, MaskAlgo::kGrasp, MaskAlgo::kSynflow,
                 MaskAlgo::kLth})
    if (mask_algo_name(a) == name) return a;
  throw ConfigError("unknown mask algorithm '" + std::string(name) + "'");
}

std::size_t MaskBlock::survivors() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

std::size_t Mask::total() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.keep.size();
  return n;
}

std::size_t Mask::survivors() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.survivors();
  return n;
}

double Mask::sparsity() const {
  const std::size_t n = total();
  return n == 0 ? 0.0 : 1.0 - static_cast<double>(survivors()) / static_cast<double>(n);
}

const MaskBlock* Mask::find(std::string_view name) const {
  for (const auto& b : blocks)
    if (b.name == name) return &b;
  return nullptr;
}

std::size_t keep_count(std::size_t n, double s) {
  if (!(s >= 0.0 && s < 1.0)) throw ArgumentError("sparsity must lie in [0,1)");
  return static_cast<std::size_t>(std::llround((1.0 - s) * static_cast<double>(n)));
}

namespace {

struct Entry {
  double score;
  std::size_t block;  // rank of the block name
  std::size_t index;
};

std::vector<std::size_t> name_ranks(const std::vector<std::string>& names) {
  std::vector<std::size_t> order(names.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return names[a] < names[b]; });
  std::vector<std::size_t> rank(names.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  return rank;
}

// Marks the first `keep` entries (best first) in `out`.
void keep_best(std::vector<Entry>& entries, std::size_t keep, bool largest, const std::vector<std::size_t>& rank_to_block,
               Mask& out) {
  keep = std::min(keep, entries.size());
  auto better = [largest](const Entry& a, const Entry& b) {
    if (a.score != b.score) return largest ? a.score > b.score : a.score < b.score;
    if (a.block != b.block) return a.block < b.block;
    return a.index < b.index;
  };
  std::nth_element(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(keep), entries.end(), better);
  for (std::size_t i = 0; i < keep; ++i) out.blocks[rank_to_block[entries[i].block]].keep[entries[i].index] = 1;
}

}  // namespace

Mask select_mask(const SaliencyScores& scores, double s, MaskScope scope, bool keep_largest, const Mask* eligible) {
  if (scores.names.size() != scores.values.size()) throw ArgumentError("saliency names and values disagree");
  Mask out;
  out.target_sparsity = s;
  std::size_t total = 0;
  for (std::size_t b = 0; b < scores.names.size(); ++b) {
    out.blocks.push_back(MaskBlock{scores.names[b], std::vector<std::uint8_t>(scores.values[b].size(), 0)});
    total += scores.values[b].size();
    if (eligible && (b >= eligible->blocks.size() || eligible->blocks[b].keep.size() != scores.values[b].size()))
      throw ArgumentError("eligibility mask is not congruent with the scores");
    for (double v : scores.values[b])
      if (!std::isfinite(v)) throw NumericError("non-finite saliency in block " + scores.names[b]);
  }
  const std::size_t keep = keep_count(total, s);
  const auto rank = name_ranks(scores.names);
  std::vector<std::size_t> rank_to_block(rank.size());
  for (std::size_t b = 0; b < rank.size(); ++b) rank_to_block[rank[b]] = b;

  auto entries_of = [&](std::size_t b, std::vector<Entry>& entries) {
    for (std::size_t i = 0; i < scores.values[b].size(); ++i)
      if (!eligible || eligible->blocks[b].keep[i]) entries.push_back({scores.values[b][i], rank[b], i});
  };

  if (scope == MaskScope::kGlobal) {
    std::vector<Entry> entries;
    entries.reserve(total);
    for (std::size_t b = 0; b < scores.names.size(); ++b) entries_of(b, entries);
    keep_best(entries, keep, keep_largest, rank_to_block, out);
    return out;
  }

  // Layerwise: floor of each proportional share, then hand the remaining
  // survivors to the largest fractional parts (ties to the lower name).
  const std::size_t nb = scores.names.size();
  std::vector<std::size_t> quota(nb);
  std::vector<double> frac(nb);
  std::size_t assigned = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    const double share = static_cast<double>(keep) * static_cast<double>(scores.values[b].size()) /
                         static_cast<double>(std::max<std::size_t>(total, 1));
    quota[b] = static_cast<std::size_t>(std::floor(share));
    frac[b] = share - static_cast<double>(quota[b]);
    assigned += quota[b];
  }
  std::vector<std::size_t> order(nb);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return rank[a] < rank[b];
  });
  for (std::size_t r = 0; assigned < keep && r < nb; ++r, ++assigned) quota[order[r]] += 1;
  for (std::size_t b = 0; b < nb; ++b) {
    std::vector<Entry> entries;
    entries_of(b, entries);
    keep_best(entries, quota[b], keep_largest, rank_to_block, out);
  }
  return out;
}

Mask dense_mask(const Model& model) {
  Mask m;
  for (const auto& b : model.blocks())
    if (b.maskable()) m.blocks.push_back(MaskBlock{b.name, std::vector<std::uint8_t>(b.value.size(), 1)});
  return m;
}

Mask model_mask(const Model& model) {
  Mask m;
  for (const auto& b : model.blocks())
    if (b.maskable())
      m.blocks.push_back(
          MaskBlock{b.name, b.mask.empty() ? std::vector<std::uint8_t>(b.value.size(), 1) : b.mask});
  m.target_sparsity = m.sparsity();
  return m;
}

Mask random_mask(const Model& model, double s, std::uint64_t seed, MaskScope scope) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SaliencyScores sc{.criterion = "random"};
  for (const auto& b : model.blocks()) {
    if (!b.maskable()) continue;
    sc.names.push_back(b.name);
    std::vector<double> v(b.value.size());
    for (double& x : v) x = unit(rng);
    sc.values.push_back(std::move(v));
  }
  return select_mask(sc, s, scope);
}

SaliencyScores magnitude_scores(const Model& model) {
  SaliencyScores sc{.criterion = "magnitude"};
  for (const auto& b : model.blocks()) {
    if (!b.maskable()) continue;
    sc.names.push_back(b.name);
    std::vector<double> v(b.value.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(b.value[i]);
    sc.values.push_back(std::move(v));
  }
  return sc;
}

Mask magnitude_mask(const Model& model, double s, MaskScope scope) {
  return select_mask(magnitude_scores(model), s, scope);
}

std::vector<double> snip_saliency(std::span<const double> theta, std::span<const double> grad) {
  if (theta.size() != grad.size()) throw ArgumentError("parameter and gradient lengths differ");
  std::vector<double> s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = std::abs(theta[i] * grad[i]);
  return s;
}

namespace {

void check_batch(const Batch& batch) {
  if (batch.size() == 0) throw ArgumentError("saliency needs a non-empty batch");
}

// Scores restricted to the weight blocks, from a full per-block vector list.
SaliencyScores weight_scores(const Model& model, std::string criterion, const std::vector<std::vector<double>>& per_block) {
  SaliencyScores sc{.criterion = std::move(criterion)};
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    if (!model.blocks()[b].maskable()) continue;
    sc.names.push_back(model.blocks()[b].name);
    sc.values.push_back(per_block[b]);
  }
  return sc;
}

std::vector<std::vector<double>> split_blocks(const Model& model, std::span<const double> flat) {
  std::vector<std::vector<double>> out;
  std::size_t off = 0;
  for (const auto& b : model.blocks()) {
    out.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(off),
                     flat.begin() + static_cast<std::ptrdiff_t>(off + b.value.size()));
    off += b.value.size();
  }
  return out;
}

}  // namespace

SaliencyScores snip_scores(const Model& model, const Batch& batch) {
  check_batch(batch);
  const Tensor target = smooth_targets(batch.labels, model.spec().classes, 0.0);
  const auto ev = model.evaluate(batch.x, target, ForwardOptions{}, true);
  const auto grad = Model::flatten(ev.grads);
  const auto theta = model.flat_values();
  bool any = false;
  for (std::size_t b = 0, off = 0; b < model.blocks().size(); off += model.blocks()[b].value.size(), ++b)
    if (model.blocks()[b].maskable())
      for (std::size_t i = 0; i < model.blocks()[b].value.size(); ++i) any = any || grad[off + i] != 0.0;
  if (!any) throw NumericError("degenerate SNIP saliency: all weight gradients are zero");
  return weight_scores(model, "snip", split_blocks(model, snip_saliency(theta, grad)));
}

Mask snip_mask(const Model& model, const Batch& batch, double s, MaskScope scope) {
  return select_mask(snip_scores(model, batch), s, scope);
}

std::vector<double> grasp_saliency(const GradientFn& grad, std::span<const double> theta, double h) {
  const auto g = grad(theta);
  if (l2_norm(g) == 0.0) return std::vector<double>(theta.size(), 0.0);
  const auto hg = hvp_finite_diff(grad, theta, g, h);
  std::vector<double> s(theta.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(hg[i])) throw NumericError("non-finite Hessian-gradient product");
    s[i] = theta[i] * hg[i];
  }
  return s;
}

SaliencyScores grasp_scores(const Model& model, const Batch& batch) {
  check_batch(batch);
  const Tensor target = smooth_targets(batch.labels, model.spec().classes, 0.0);
  Model work = model;
  const auto theta = model.flat_values();
  const auto free = model.flat_free();
  const GradientFn grad = [&](std::span<const double> t) {
    work.set_flat_values(t);
    auto g = Model::flatten(work.evaluate(batch.x, target, ForwardOptions{}, true).grads);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= free[i];
    return g;
  };
  return weight_scores(model, "grasp", split_blocks(model, grasp_saliency(grad, theta)));
}

Mask grasp_mask(const Model& model, const Batch& batch, double s, MaskScope scope) {
  return select_mask(grasp_scores(model, batch), s, scope, !kGraspPruneLargest);
}

SaliencyScores synflow_scores(const Model& model) {
  Model work = model;
  for (auto& b : work.blocks())
    for (std::size_t i = 0; i < b.value.size(); ++i) b.value[i] = b.masked(i) ? 0.0 : std::abs(b.value[i]);
  Shape in = model.spec().input_shape;
  in.insert(in.begin(), 1);
  Graph g;
  const NodeId x = g.input("__x");
  const ForwardOptions opts{.bn_passthrough = true};
  const ModelGraph mg = work.build(g, x, opts, true);
  g.set_root(g.sum(mg.logits));
  NamedTensors binds = work.bindings();
  binds.emplace("__x", Tensor(in, 1.0));
  g.forward(binds);
  g.backward(Tensor::scalar(1.0));
  std::vector<std::vector<double>> per_block;
  for (std::size_t b = 0; b < work.blocks().size(); ++b) {
    const Tensor& grad = g.grad(mg.params[b]);
    const Tensor& v = work.blocks()[b].value;
    std::vector<double> s(v.size());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = v[i] * grad[i];
    per_block.push_back(std::move(s));
  }
  return weight_scores(model, "synflow", per_block);
}

Mask synflow_mask(const Model& model, double s, std::size_t iterations, MaskScope scope) {
  if (iterations == 0) throw ArgumentError("synflow needs at least one iteration");
  keep_count(model.maskable_count(), s);
  Model work = model;
  Mask mask = model_mask(model);
  std::vector<std::string> warnings;
  for (std::size_t k = 1; k <= iterations; ++k) {
    const double sk = k == iterations ? s
                                      : 1.0 - std::pow(1.0 - s, static_cast<double>(k) / static_cast<double>(iterations));
    mask = select_mask(synflow_scores(work), sk, scope, true, &mask);
    apply_mask(work, mask);
    const auto report = layer_collapse_check(mask);
    if (report.collapsed && warnings.empty())
      warnings.push_back("layer collapse at synflow round " + std::to_string(k) + ": " + report.empty_layers.front());
  }
  mask.target_sparsity = s;
  mask.warnings = std::move(warnings);
  return mask;
}

LotteryTicket imp_lth(const Model& init, const Dataset& data, std::size_t rounds, double rate,
                      const TrainConfig& cfg, MaskScope scope) {
  if (rounds == 0) throw ArgumentError("imp_lth needs rounds >= 1");
  if (!(rate > 0.0 && rate < 1.0)) throw ArgumentError("per-round prune rate must lie in (0,1)");
  const std::size_t n = init.maskable_count();
  const double final_sparsity = 1.0 - std::pow(1.0 - rate, static_cast<double>(rounds));
  if (keep_count(n, final_sparsity) == 0)
    throw ArgumentError("imp_lth schedule prunes every weight");

  Mask mask = model_mask(init);
  for (std::size_t r = 1; r <= rounds; ++r) {
    Model m = init;
    apply_mask(m, mask);
    train(m, data, cfg);
    const double sr = 1.0 - std::pow(1.0 - rate, static_cast<double>(r));
    mask = select_mask(magnitude_scores(m), sr, scope, true, &mask);
  }
  mask.target_sparsity = final_sparsity;
  LotteryTicket t{mask, init};
  apply_mask(t.rewound, mask);
  return t;
}

void apply_mask(Model& model, const Mask& mask) {
  std::size_t used = 0;
  for (auto& b : model.blocks()) {
    if (!b.maskable()) continue;
    const MaskBlock* mb = mask.find(b.name);
    if (!mb) throw ArgumentError("mask has no entry for block " + b.name);
    if (mb->keep.size() != b.value.size())
      throw ArgumentError("mask for block " + b.name + " has " + std::to_string(mb->keep.size()) + " entries, expected " +
                          std::to_string(b.value.size()));
    ++used;
  }
  if (used != mask.blocks.size()) throw ArgumentError("mask names blocks the model does not have");
  for (auto& b : model.blocks()) {
    if (!b.maskable()) continue;
    b.mask = mask.find(b.name)->keep;
    for (std::size_t i = 0; i < b.value.size(); ++i)
      if (!b.mask[i]) {
        b.value[i] = 0.0;
        if (i < b.momentum.size()) b.momentum[i] = 0.0;
      }
  }
}

CollapseReport layer_collapse_check(const Mask& mask) {
  CollapseReport r;
  for (const auto& b : mask.blocks) {
    const std::size_t s = b.survivors();
    r.survivors.emplace_back(b.name, s);
    r.total_survivors += s;
    if (s == 0) r.empty_layers.push_back(b.name);
  }
  r.collapsed = !r.empty_layers.empty();
  return r;
}

}  // namespace splab
