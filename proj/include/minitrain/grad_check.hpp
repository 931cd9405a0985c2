#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "minitrain/tape.hpp"

namespace minitrain {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double tape_grad_at_worst = 0.0;
  double numeric_grad_at_worst = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

struct GradCheckOptions {
  // 0 checks every coordinate; otherwise this many coordinates are drawn
  // uniformly over all elements of all checked tensors.
  std::size_t samples = 0;
  std::uint64_t seed = 0;
  // Relative error is |a − b| / max(|a|, |b|, abs_floor), so gradients far
  // below the floor are compared in absolute terms.
  double abs_floor = 1e-8;
};

/// Compares tape gradients of a scalar function of `inputs` against central
/// finite differences. `f` is evaluated with an active tape once and then
/// twice per checked coordinate without one; it must read the inputs'
/// current values every call.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& f, std::vector<Tensor<T>> inputs,
                           double step, double tol, GradCheckOptions options = {}) {
  auto eval = [&]() {
    const double v = static_cast<double>(f().item());
    if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
    return v;
  };

  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.ensure_grad();
    in.zero_grad();
  }
  {
    Tape<T> tape;
    Tensor<T> y = f();
    if (!std::isfinite(static_cast<double>(y.item()))) {
      throw NumericError("grad_check: function value is not finite");
    }
    tape.backward(y);
  }
  std::vector<std::vector<T>> analytic;
  std::size_t total = 0;
  for (auto& in : inputs) {
    analytic.emplace_back(in.grad().begin(), in.grad().end());
    total += in.numel();
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  if (options.samples == 0 || options.samples >= total) {
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      for (std::size_t i = 0; i < inputs[t].numel(); ++i) coords.emplace_back(t, i);
    }
  } else {
    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    for (std::size_t s = 0; s < options.samples; ++s) {
      std::size_t flat = pick(rng), t = 0;
      while (flat >= inputs[t].numel()) flat -= inputs[t++].numel();
      coords.emplace_back(t, flat);
    }
  }

  GradCheckReport report;
  const T h = static_cast<T>(step);
  for (auto [t, i] : coords) {
    T& slot = inputs[t].data()[i];
    const T saved = slot;
    slot = saved + h;
    const double up = eval();
    slot = saved - h;
    const double down = eval();
    slot = saved;
    const double numeric = (up - down) / (2.0 * step);
    const double tape_g = static_cast<double>(analytic[t][i]);
    const double denom = std::max({std::abs(tape_g), std::abs(numeric), options.abs_floor});
    const double err = std::abs(tape_g - numeric) / denom;
    if (err > report.max_rel_error || report.checked == 0) {
      report.max_rel_error = std::max(report.max_rel_error, err);
      report.tape_grad_at_worst = tape_g;
      report.numeric_grad_at_worst = numeric;
      report.worst_tensor = t;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

/// Single-input convenience form.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, Tensor<T> x,
                           double step, double tol, GradCheckOptions options = {}) {
  return grad_check<T>([&]() { return f(x); }, std::vector<Tensor<T>>{x}, step, tol, options);
}

}  // namespace minitrain
