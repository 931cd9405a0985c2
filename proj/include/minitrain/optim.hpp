#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "minitrain/param_set.hpp"

namespace minitrain {

enum class Schedule { kOneCycle, kConstant };

struct OptConfig {
  double lr_peak = 0.4;
  double momentum = 0.9;
  double weight_decay = 0.0;  // λ in L + λ·wᵀw
  double rho = 0.05;          // SAM neighborhood radius
  bool gc_enabled = false;
  bool sam_enabled = false;
  Schedule schedule = Schedule::kOneCycle;
  double warmup_fraction = 0.2;
  std::size_t total_steps = 1;

  void validate() const;
};

template <typename T>
struct OptState {
  std::vector<std::vector<T>> velocity;
  // SAM scratch: the applied perturbation and the exact pre-ascent values.
  std::vector<std::vector<T>> sam_perturbation;
  std::vector<std::vector<T>> sam_origin;
  std::size_t step_index = 0;

  static OptState create(const ParamSet<T>& params, const OptConfig& cfg);
};

/// Recomputes loss and gradients at the current parameter values. The
/// gradients must be zero on entry; the closure accumulates into them.
using LossClosure = std::function<double()>;

struct SamLosses {
  double at_origin;
  double at_perturbed;
};

/// Subtracts the per-output-slice mean from the gradient of every
/// GC-eligible parameter (mean over all non-leading axes).
template <typename T>
void centralize_gradients(ParamSet<T>& params);

/// Coupled decay (g += 2λw on non-exempt parameters), heavy-ball momentum,
/// then w -= lr·v.
template <typename T>
void sgd_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg);

/// Sharpness-aware step: gradient at w, ascend to w + ρ·g/‖g‖, gradient
/// there, restore w exactly, descend with sgd_step using the perturbed
/// gradient. GC, when enabled, is applied to both gradients.
template <typename T>
SamLosses sam_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg,
                   const LossClosure& closure);

/// Full update for one batch: SAM when enabled, otherwise
/// closure → (GC) → sgd_step. Returns the loss at the current parameters.
template <typename T>
double optimizer_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg,
                      const LossClosure& closure);

/// One-cycle: linear 0 → lr_peak over warmup_fraction·total_steps, then
/// linear → 0 at total_steps. Out-of-range steps clamp to the endpoints.
double schedule_lr(const OptConfig& cfg, std::size_t step);

/// Global L2 norm over all parameter gradients.
template <typename T>
double gradient_norm(const ParamSet<T>& params);

}  // namespace minitrain
