#include "minitrain/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace minitrain {

void OptConfig::validate() const {
  if (!(lr_peak > 0.0)) throw ConfigError("lr_peak must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (!(rho >= 0.0)) throw ConfigError("SAM rho must be nonnegative");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) {
    throw ConfigError("warmup fraction must lie in [0,1]");
  }
  if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
}

template <typename T>
OptState<T> OptState<T>::create(const ParamSet<T>& params, const OptConfig& cfg) {
  OptState state;
  for (const auto& e : params) {
    state.velocity.emplace_back(e.tensor.numel(), T(0));
    if (cfg.sam_enabled) {
      state.sam_perturbation.emplace_back(e.tensor.numel(), T(0));
      state.sam_origin.emplace_back(e.tensor.numel(), T(0));
    }
  }
  return state;
}

template <typename T>
void centralize_gradients(ParamSet<T>& params) {
  for (auto& e : params) {
    if (!e.tensor.has_grad()) throw NumericError("centralize_gradients: no gradient for " + e.name);
    if (!e.gc_eligible) continue;
    auto g = e.tensor.grad();
    const std::size_t rows = e.tensor.dim(0);
    const std::size_t width = g.size() / rows;
    for (std::size_t r = 0; r < rows; ++r) {
      T* slice = g.data() + r * width;
      double acc = 0.0;
      for (std::size_t i = 0; i < width; ++i) acc += static_cast<double>(slice[i]);
      const T mean = static_cast<T>(acc / static_cast<double>(width));
      for (std::size_t i = 0; i < width; ++i) slice[i] -= mean;
    }
  }
}

template <typename T>
double gradient_norm(const ParamSet<T>& params) {
  double acc = 0.0;
  for (const auto& e : params) {
    for (T g : e.tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

template <typename T>
void sgd_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg) {
  if (state.velocity.size() != params.size()) {
    throw ConfigError("optimizer state does not match the parameter set");
  }
  for (const auto& e : params) {
    if (!e.tensor.has_grad()) throw NumericError("sgd_step: no gradient for " + e.name);
    for (T g : e.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NumericError("non-finite gradient in parameter " + e.name);
      }
    }
  }
  const T two_lambda = static_cast<T>(2.0 * cfg.weight_decay);
  const T mom = static_cast<T>(cfg.momentum);
  const T step = static_cast<T>(lr);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& e = params[p];
    auto w = e.tensor.data();
    auto g = e.tensor.grad();
    auto& v = state.velocity[p];
    if (!e.decay_exempt && cfg.weight_decay != 0.0) {
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += two_lambda * w[i];
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = mom * v[i] + g[i];
      w[i] -= step * v[i];
    }
  }
  ++state.step_index;
}

template <typename T>
SamLosses sam_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg,
                   const LossClosure& closure) {
  params.zero_grad();
  const double loss0 = closure();
  if (!std::isfinite(loss0)) throw NumericError("non-finite loss before SAM ascent");
  if (cfg.gc_enabled) centralize_gradients(params);
  const double norm = gradient_norm(params);
  if (cfg.rho == 0.0 || norm == 0.0) {
    sgd_step(params, state, lr, cfg);
    return {loss0, loss0};
  }
  if (state.sam_origin.size() != params.size()) {
    throw ConfigError("optimizer state was created without SAM buffers");
  }
  const T factor = static_cast<T>(cfg.rho / norm);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].tensor.data();
    auto g = params[p].tensor.grad();
    auto& eps = state.sam_perturbation[p];
    auto& origin = state.sam_origin[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      origin[i] = w[i];
      eps[i] = factor * g[i];
      w[i] += eps[i];
    }
  }
  auto restore = [&]() {
    for (std::size_t p = 0; p < params.size(); ++p) {
      std::copy(state.sam_origin[p].begin(), state.sam_origin[p].end(),
                params[p].tensor.data().begin());
    }
  };
  params.zero_grad();
  double loss1;
  try {
    loss1 = closure();
  } catch (...) {
    restore();
    throw;
  }
  restore();
  if (!std::isfinite(loss1)) throw NumericError("non-finite loss at the SAM-perturbed point");
  if (cfg.gc_enabled) centralize_gradients(params);
  sgd_step(params, state, lr, cfg);
  return {loss0, loss1};
}

template <typename T>
double optimizer_step(ParamSet<T>& params, OptState<T>& state, double lr, const OptConfig& cfg,
                      const LossClosure& closure) {
  if (cfg.sam_enabled) return sam_step(params, state, lr, cfg, closure).at_origin;
  params.zero_grad();
  const double loss = closure();
  if (!std::isfinite(loss)) throw NumericError("non-finite training loss");
  if (cfg.gc_enabled) centralize_gradients(params);
  sgd_step(params, state, lr, cfg);
  return loss;
}

double schedule_lr(const OptConfig& cfg, std::size_t step) {
  if (cfg.schedule == Schedule::kConstant) return cfg.lr_peak;
  const double total = static_cast<double>(cfg.total_steps);
  const double s = std::min(static_cast<double>(step), total);
  const double warm = cfg.warmup_fraction * total;
  if (s < warm) return cfg.lr_peak * s / warm;
  if (total <= warm) return cfg.lr_peak;
  return cfg.lr_peak * (total - s) / (total - warm);
}

template struct OptState<float>;
template struct OptState<double>;
template void centralize_gradients(ParamSet<float>&);
template void centralize_gradients(ParamSet<double>&);
template double gradient_norm(const ParamSet<float>&);
template double gradient_norm(const ParamSet<double>&);
template void sgd_step(ParamSet<float>&, OptState<float>&, double, const OptConfig&);
template void sgd_step(ParamSet<double>&, OptState<double>&, double, const OptConfig&);
template SamLosses sam_step(ParamSet<float>&, OptState<float>&, double, const OptConfig&,
                            const LossClosure&);
template SamLosses sam_step(ParamSet<double>&, OptState<double>&, double, const OptConfig&,
                            const LossClosure&);
template double optimizer_step(ParamSet<float>&, OptState<float>&, double, const OptConfig&,
                               const LossClosure&);
template double optimizer_step(ParamSet<double>&, OptState<double>&, double, const OptConfig&,
                               const LossClosure&);

}  // namespace minitrain
