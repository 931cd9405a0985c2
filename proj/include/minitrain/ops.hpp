#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "minitrain/tape.hpp"
#include "minitrain/tensor.hpp"

namespace minitrain {

enum class Mode { kTrain, kEval };

// Differentiable operators. Each records a backward rule on the active
// Tape<T> when any input requires a gradient; otherwise it is a plain
// forward computation.

/// Zero-padded cross-correlation. x: [N,Cin,H,W], w: [Cout,Cin,kH,kW],
/// bias optional [Cout].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 std::size_t stride, std::size_t pad);

/// k×k max pooling; ties resolve to the first row-major window element.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride);

/// [N,C,H,W] -> [N,C] spatial maximum, same tie rule as maxpool2d.
template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& x);

/// x·wᵀ + b with x: [N,D], w: [K,D], b: [K] (b may be null).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);

/// Per-channel running statistics owned by a batchnorm layer.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  static BatchNormState create(std::size_t channels) {
    return {Tensor<T>(Shape{channels}, T(0)), Tensor<T>(Shape{channels}, T(1))};
  }
};

struct BatchNormOptions {
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Train mode normalizes with biased batch statistics over (N,H,W) and
/// blends them into `state` with the given momentum; eval mode uses `state`.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, BatchNormOptions options = {});

/// x for x >= 0, alpha·(exp(x/alpha) − 1) otherwise.
template <typename T>
Tensor<T> celu(const Tensor<T>& x, double alpha);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor);

/// Sum of all elements as a [1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x);

/// Label-smoothed targets: (1 − alpha)·one_hot + alpha/K, shape [N,K].
template <typename T>
Tensor<T> smoothed_targets(std::span<const int> labels, double alpha, std::size_t classes);

template <typename T>
struct CrossEntropyResult {
  Tensor<T> loss;     // [1], mean over the batch
  Tensor<T> targets;  // [N,K]
};

/// Mean over rows of −Σ_k target[k]·log softmax(logits)[k], with
/// max-subtracted log-sum-exp.
template <typename T>
CrossEntropyResult<T> smoothed_cross_entropy(const Tensor<T>& logits,
                                             std::span<const int> labels, double alpha);

}  // namespace minitrain
