#include "splab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "splab/error.hpp"

namespace splab {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch must be >= 1");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train.lr0 must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.wd must be non-negative");
  if (!(ls_alpha >= 0.0 && ls_alpha < 1.0)) throw ConfigError("train.ls_alpha must lie in [0,1)");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("train.milestones must be strictly increasing");
    if (milestones[i] >= epochs) throw ConfigError("train.milestones must be < train.epochs");
  }
  if (gsk || gsw) GhostSchedule(ghost, milestones, gsk, gsw);
  if (lrsi) rescale.validate();
  probes.validate();
}

std::vector<double> smooth_labels(std::size_t target_class, std::size_t classes, double ls_alpha) {
  if (classes < 2) throw ArgumentError("label smoothing needs K >= 2");
  if (target_class >= classes) throw ArgumentError("class index " + std::to_string(target_class) + " outside [0, K)");
  if (!(ls_alpha >= 0.0 && ls_alpha < 1.0)) throw ArgumentError("smoothing ratio must lie in [0,1)");
  const double off = ls_alpha / static_cast<double>(classes);
  std::vector<double> y(classes, off);
  y[target_class] = (1.0 - ls_alpha) + off;
  return y;
}

Tensor smooth_targets(std::span<const std::size_t> labels, std::size_t classes, double ls_alpha) {
  Tensor t({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto row = smooth_labels(labels[r], classes, ls_alpha);
    std::copy(row.begin(), row.end(), t.values().begin() + static_cast<std::ptrdiff_t>(r * classes));
  }
  return t;
}

double cross_entropy(const Tensor& logits, const Tensor& target) {
  Graph g;
  const NodeId z = g.input("logits");
  const NodeId t = g.input("target");
  g.mark_output("loss", g.softmax_cross_entropy(z, t));
  return g.forward({{"logits", logits}, {"target", target}}).at("loss").item();
}

void sgd_step(std::vector<ParamBlock>& blocks, const std::vector<Tensor>& grads, double lr, double momentum,
              double weight_decay) {
  if (grads.size() != blocks.size()) throw ArgumentError("one gradient per parameter block expected");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    ParamBlock& pb = blocks[b];
    if (grads[b].size() != pb.value.size()) throw ArgumentError("gradient for block " + pb.name + " has the wrong size");
    if (!grads[b].all_finite()) throw NumericError("non-finite gradient in block " + pb.name);
    if (pb.momentum.size() != pb.value.size()) pb.momentum.assign(pb.value.size(), 0.0);
    for (std::size_t i = 0; i < pb.value.size(); ++i) {
      if (pb.masked(i)) continue;
      const double g = grads[b][i] + weight_decay * pb.value[i];
      pb.momentum[i] = momentum * pb.momentum[i] + g;
      pb.value[i] -= lr * pb.momentum[i];
    }
  }
}

double lr_at(std::size_t epoch, double lr0, std::span<const std::size_t> milestones) {
  double lr = lr0;
  for (auto m : milestones)
    if (m <= epoch) lr /= 10.0;
  return lr;
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const double* z = logits.data().data() + r * k;
    hits += static_cast<std::size_t>(std::max_element(z, z + k) - z) == labels[r];
  }
  return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
}

namespace {

void check_compatible(const Model& model, const Dataset& data) {
  if (model.spec().input_shape != data.input_shape)
    throw ArgumentError("model input " + shape_str(model.spec().input_shape) + " does not match dataset input " +
                        shape_str(data.input_shape));
  if (model.spec().classes != data.classes) throw ArgumentError("model and dataset disagree on the class count");
  if (data.train_size() < 2 || data.test_size() == 0) throw ArgumentError("dataset split is too small to train on");
}

}  // namespace

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  check_compatible(model, data);
  TrainResult result;
  if (cfg.epochs == 0) return result;

  for (auto& b : model.blocks()) {
    b.momentum.assign(b.value.size(), 0.0);
    for (std::size_t i = 0; i < b.value.size(); ++i)
      if (b.masked(i)) b.value[i] = 0.0;
  }
  const std::size_t k = data.classes;
  const bool ghosted = cfg.gsk || cfg.gsw;
  const GhostSchedule schedule = ghosted ? ghost_mode(cfg.ghost, cfg.milestones, cfg.gsk, cfg.gsw) : GhostSchedule{};
  auto state_at = [&](std::size_t e) { return ghosted ? schedule.at(e) : GhostState{}; };
  auto options_at = [&](std::size_t e) { return ghosted ? schedule.forward_options(e) : ForwardOptions{}; };

  if (cfg.lrsi) {
    const Batch b = data.train_head(cfg.rescale.batch);
    const Tensor target = smooth_targets(b.labels, k, cfg.ls_alpha);
    result.scales = learn_scales(model, b.x, target, cfg.lr0, cfg.rescale, options_at(0));
    apply_scales(model, *result.scales);
  }

  const Batch probe = data.train_head(cfg.probes.batch);
  const Tensor probe_target = smooth_targets(probe.labels, k, cfg.ls_alpha);
  const Tensor test_target = smooth_targets(data.test_y, k, 0.0);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train_size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const GhostState state = state_at(e);
    ForwardOptions opts = options_at(e);
    RunRecord rec{.epoch = e, .lr = lr_at(e, cfg.lr0, cfg.milestones), .beta = state.beta, .alpha = state.alpha};

    const bool swap_now = ghosted && cfg.gsw && e > 0 && state.relu_swapped() && !state_at(e - 1).relu_swapped();
    if (swap_now && cfg.ghost.soft == ActivationKind::kPSwish) {
      const ForwardOptions last{.replace_relu = Activation{ActivationKind::kPSwish, cfg.ghost.beta_max}};
      const auto ev = model.evaluate(probe.x, probe_target, last, false, true);
      double worst = 0.0;
      for (const auto& pre : ev.pre_activations) worst = std::max(worst, swap_deviation(pre.values(), cfg.ghost.beta_max));
      result.swap_deviation = worst;
    }

    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, flow_sum = 0.0;
    std::size_t seen = 0, hits = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, order.size() - start);
      if (len < 2) break;  // train-mode BN needs two examples
      const Batch b = data.train_batch(std::span(order).subspan(start, len));
      const Tensor target = smooth_targets(b.labels, k, cfg.ls_alpha);
      Model::Evaluation ev;
      try {
        ev = model.train_step_eval(b.x, target, opts);
      } catch (const OverflowError& err) {
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(e) + " step " + std::to_string(steps) + ": " + err.what();
        return result;
      }
      if (!std::isfinite(ev.loss) || ev.loss > cfg.divergence_loss) {
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(e) + " step " + std::to_string(steps) + ": loss " +
                            std::to_string(ev.loss) + " exceeds the divergence threshold";
        return result;
      }
      loss_sum += ev.loss * static_cast<double>(len);
      hits += static_cast<std::size_t>(std::llround(accuracy(ev.logits, b.labels) * static_cast<double>(len)));
      seen += len;
      flow_sum += avg_gradient_flow(model, ev.grads);
      try {
        sgd_step(model.blocks(), ev.grads, rec.lr, cfg.momentum, cfg.weight_decay);
      } catch (const NumericError& err) {
        result.diverged = true;
        result.diagnostic = "epoch " + std::to_string(e) + ": " + err.what();
        return result;
      }
      ++steps;
    }
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_acc = static_cast<double>(hits) / static_cast<double>(seen);
    rec.grad_flow = flow_sum / static_cast<double>(steps);

    ForwardOptions eval_opts = opts;
    eval_opts.bn_mode = BatchNormMode::kEval;
    try {
      const auto test = model.evaluate(data.test_x, test_target, eval_opts, false);
      rec.test_loss = test.loss;
      rec.test_acc = accuracy(test.logits, data.test_y);
    } catch (const OverflowError& err) {
      result.diverged = true;
      result.diagnostic = "epoch " + std::to_string(e) + " evaluation: " + err.what();
      return result;
    }

    if (cfg.probes.due(e, cfg.epochs)) {
      rec.act_sparsity = activation_sparsity(model, probe.x, cfg.probes.act_eps, opts);
      if (cfg.probes.spectrum) {
        const PowerOptions po{.k = cfg.probes.eig_count, .iters = cfg.probes.power_iters, .tol = cfg.probes.tol,
                              .seed = cfg.seed + e};
        SpectrumRecord sr = top_hessian_eigs(model, probe.x, probe_target, po, opts);
        sr.epoch = e;
        rec.top_eigs = sr.eigenvalues;
        sr.eigenvectors.clear();
        result.spectra.push_back(std::move(sr));
      }
    }
    result.history.push_back(std::move(rec));
  }
  return result;
}

TrainResult train(Model& model, const Mask& mask, const Dataset& data, const TrainConfig& cfg) {
  apply_mask(model, mask);
  return train(model, data, cfg);
}

}  // namespace splab
