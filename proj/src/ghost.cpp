#include "splab/ghost.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "splab/activations.hpp"
#include "splab/error.hpp"

namespace splab {

std::string_view ghost_policy_name(GhostPolicy p) {
  switch (p) {
    case GhostPolicy::kGhost: return "ghost";
    case GhostPolicy::kKeepForever: return "keep_forever";
    case GhostPolicy::kGhostAtSecondDecay: return "ghost_at_second_decay";
    case GhostPolicy::kAbruptRemoval: return "abrupt_removal";
  }
  return "?";
}

GhostPolicy parse_ghost_policy(std::string_view name) {
  for (auto p : {GhostPolicy::kGhost, GhostPolicy::kKeepForever, GhostPolicy::kGhostAtSecondDecay,
                 GhostPolicy::kAbruptRemoval})
    if (ghost_policy_name(p) == name) return p;
  throw ConfigError("unknown ghost policy '" + std::string(name) + "'");
}

std::string_view schedule_shape_name(ScheduleShape s) {
  return s == ScheduleShape::kLinear ? "linear" : "cosine";
}

ScheduleShape parse_schedule_shape(std::string_view name) {
  if (name == "linear") return ScheduleShape::kLinear;
  if (name == "cosine") return ScheduleShape::kCosine;
  throw ConfigError("unknown ghost schedule '" + std::string(name) + "'");
}

void GhostConfig::validate() const {
  if (!(beta0 > 0.0) || !std::isfinite(beta0)) throw ConfigError("ghost.beta0 must be positive");
  if (!(beta_max >= beta0) || !std::isfinite(beta_max)) throw ConfigError("ghost.beta_max must be finite and >= beta0");
  if (!(alpha0 >= 0.0 && alpha0 <= 1.0)) throw ConfigError("ghost.alpha0 must lie in [0,1]");
  if (soft == ActivationKind::kRelu) throw ConfigError("ghost.activation must be pswish or mish");
}

namespace {

// Fraction of the ramp completed at `epoch`, in [0,1).
double progress(std::size_t epoch, std::size_t t_end, ScheduleShape shape) {
  const double u = static_cast<double>(epoch) / static_cast<double>(t_end);
  if (shape == ScheduleShape::kLinear) return u;
  return 0.5 * (1.0 - std::cos(std::numbers::pi * u));
}

}  // namespace

double beta_at(std::size_t epoch, std::size_t t_end, double beta0, double beta_max, ScheduleShape shape) {
  if (!(beta0 > 0.0)) throw ArgumentError("beta0 must be positive");
  if (t_end == 0) throw ArgumentError("t_end must be positive");
  if (epoch >= t_end) return kReluBeta;
  return beta0 + (beta_max - beta0) * progress(epoch, t_end, shape);
}

double alpha_at(std::size_t epoch, std::size_t t_end, double alpha0, ScheduleShape shape) {
  if (t_end == 0) throw ArgumentError("t_end must be positive");
  if (epoch >= t_end) return 0.0;
  return alpha0 * (1.0 - progress(epoch, t_end, shape));
}

GhostSchedule::GhostSchedule(const GhostConfig& cfg, std::span<const std::size_t> milestones, bool skip, bool soft)
    : cfg_(cfg), skip_(skip), soft_(soft) {
  cfg_.validate();
  const std::size_t need = cfg.policy == GhostPolicy::kGhostAtSecondDecay ? 2 : 1;
  if (milestones.size() < need) {
    if (cfg.policy != GhostPolicy::kKeepForever)
      throw ConfigError("ghost policy " + std::string(ghost_policy_name(cfg.policy)) + " needs " +
                        std::to_string(need) + " LR milestone(s)");
    t_end_ = 0;
    return;
  }
  t_end_ = milestones[need - 1];
  if (t_end_ == 0) throw ConfigError("ghost removal epoch must be positive");
}

GhostState GhostSchedule::at(std::size_t epoch) const {
  GhostState s;
  s.t_end = t_end_;
  switch (cfg_.policy) {
    case GhostPolicy::kGhost:
    case GhostPolicy::kGhostAtSecondDecay:
      s.phase = epoch < t_end_ ? GhostPhase::kGhost : GhostPhase::kPostGhost;
      s.alpha = alpha_at(epoch, t_end_, cfg_.alpha0, cfg_.schedule);
      s.beta = beta_at(epoch, t_end_, cfg_.beta0, cfg_.beta_max, cfg_.schedule);
      break;
    case GhostPolicy::kKeepForever:
      s.phase = GhostPhase::kGhost;
      s.alpha = cfg_.alpha0;
      s.beta = cfg_.beta0;
      break;
    case GhostPolicy::kAbruptRemoval:
      s.phase = epoch < t_end_ ? GhostPhase::kGhost : GhostPhase::kPostGhost;
      s.alpha = s.phase == GhostPhase::kGhost ? cfg_.alpha0 : 0.0;
      s.beta = s.phase == GhostPhase::kGhost ? cfg_.beta0 : kReluBeta;
      break;
  }
  if (!skip_) s.alpha = 0.0;
  if (!soft_) s.beta = kReluBeta;
  return s;
}

ForwardOptions GhostSchedule::forward_options(std::size_t epoch) const {
  return ghost_forward_options(at(epoch), cfg_, skip_, soft_);
}

GhostSchedule ghost_mode(const GhostConfig& cfg, std::span<const std::size_t> milestones, bool skip, bool soft) {
  return GhostSchedule(cfg, milestones, skip, soft);
}

ForwardOptions ghost_forward_options(const GhostState& state, const GhostConfig& cfg, bool skip, bool soft) {
  ForwardOptions o;
  if (state.relu_swapped()) return o;
  if (skip) o.ghost_alpha = state.alpha;
  if (soft) o.replace_relu = Activation{cfg.soft, state.beta};
  return o;
}

double swap_deviation(std::span<const double> pre_activations, double beta) {
  double worst = 0.0;
  for (double x : pre_activations) worst = std::max(worst, std::abs(pswish_value(x, beta) - relu_value(x)));
  return worst;
}

}  // namespace splab
