#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "splab/model.hpp"

namespace splab {

enum class GhostPolicy { kGhost, kKeepForever, kGhostAtSecondDecay, kAbruptRemoval };
enum class ScheduleShape { kLinear, kCosine };
enum class GhostPhase { kGhost, kPostGhost };

std::string_view ghost_policy_name(GhostPolicy p);
/// Throws ConfigError for an unknown name.
GhostPolicy parse_ghost_policy(std::string_view name);
std::string_view schedule_shape_name(ScheduleShape s);
ScheduleShape parse_schedule_shape(std::string_view name);

inline constexpr double kReluBeta = std::numeric_limits<double>::infinity();

struct GhostConfig {
  GhostPolicy policy = GhostPolicy::kGhost;
  double beta0 = 1.0;
  double beta_max = 10.0;
  double alpha0 = 1.0;
  ScheduleShape schedule = ScheduleShape::kLinear;
  ActivationKind soft = ActivationKind::kPSwish;  ///< mish ignores beta

  void validate() const;
};

struct GhostState {
  double beta = kReluBeta;  ///< +inf once the activation is plain ReLU
  double alpha = 0.0;
  GhostPhase phase = GhostPhase::kPostGhost;
  std::size_t t_end = 0;

  bool relu_swapped() const noexcept { return phase == GhostPhase::kPostGhost; }
};

/// beta0 -> beta_max over [0, t_end); kReluBeta from t_end on.
double beta_at(std::size_t epoch, std::size_t t_end, double beta0, double beta_max,
               ScheduleShape shape = ScheduleShape::kLinear);
/// alpha0 -> 0 over [0, t_end); exactly 0 from t_end on.
double alpha_at(std::size_t epoch, std::size_t t_end, double alpha0 = 1.0, ScheduleShape shape = ScheduleShape::kLinear);

/// Per-epoch ghost state for one run. `skip` enables ghost skips (GSk), `soft`
/// enables ghost soft neurons (GSw); a disabled half reports alpha 0 / beta +inf.
class GhostSchedule {
 public:
  GhostSchedule() = default;
  GhostSchedule(const GhostConfig& cfg, std::span<const std::size_t> milestones, bool skip, bool soft);

  GhostState at(std::size_t epoch) const;
  ForwardOptions forward_options(std::size_t epoch) const;
  std::size_t t_end() const noexcept { return t_end_; }
  const GhostConfig& config() const noexcept { return cfg_; }
  bool active() const noexcept { return skip_ || soft_; }

 private:
  GhostConfig cfg_;
  std::size_t t_end_ = 0;
  bool skip_ = false;
  bool soft_ = false;
};

/// Resolves the policy into a schedule; throws ConfigError when the milestones
/// cannot supply its removal epoch.
GhostSchedule ghost_mode(const GhostConfig& cfg, std::span<const std::size_t> milestones, bool skip = true,
                         bool soft = true);

/// Forward options for a given state (ReLU and no ghost skips after removal).
ForwardOptions ghost_forward_options(const GhostState& state, const GhostConfig& cfg, bool skip, bool soft);

/// max |pswish(x, beta) - relu(x)| over the given pre-activations.
double swap_deviation(std::span<const double> pre_activations, double beta);

}  // namespace splab
