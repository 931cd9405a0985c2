#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "minitrain/ops.hpp"
#include "minitrain/param_set.hpp"

namespace minitrain {

enum class ActivationKind { kRelu, kCelu };

struct Activation {
  ActivationKind kind = ActivationKind::kRelu;
  double alpha = 0.3;  // CELU only
};

enum class StemKind { kPlain, kWhitened };

inline constexpr std::size_t kWhiteningFilterCount = 27;
inline constexpr std::size_t kWhiteningFilterValues = 27 * 3 * 3 * 3;

struct StemSpec {
  StemKind kind = StemKind::kPlain;
  // [27,3,3,3] row-major; frozen, never registered as a parameter.
  std::vector<double> filters;
  std::size_t expand_to = 64;
};

struct ModelSpec {
  std::array<std::size_t, 4> widths{64, 128, 256, 512};
  Activation activation;
  StemSpec stem;
  std::size_t classes = 10;
  std::size_t input_channels = 3;
  std::size_t image_size = 32;
  double head_scale = 0.125;
  BatchNormOptions batchnorm;

  void validate() const;
};

std::string model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const std::string& text);

template <typename T>
struct ConvBnLayer {
  Tensor<T> weight;  // [Cout,Cin,3,3], no bias: batchnorm follows
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> stats;
};

template <typename T>
struct ResidualBranch {
  ConvBnLayer<T> first;
  ConvBnLayer<T> second;
};

/// conv3×3(pad 1) → batchnorm → activation.
template <typename T>
Tensor<T> conv_bn_act(const Tensor<T>& x, ConvBnLayer<T>& layer, const Activation& act,
                      Mode mode, const BatchNormOptions& bn);

/// x + f(x) with f = conv_bn_act applied twice at constant width.
template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, ResidualBranch<T>& branch, const Activation& act,
                         Mode mode, const BatchNormOptions& bn);

/// ResNet-9: stem; prep(w0); layer1(w1)+pool; res(w1); layer2(w2)+pool;
/// layer3(w3)+pool; res(w3); global max pool; linear; × head_scale.
template <typename T>
class ResNet9 {
 public:
  static ResNet9 build(const ModelSpec& spec, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x, Mode mode);

  const ModelSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Every named tensor making up the model state: trainable parameters,
  /// batchnorm running statistics and the frozen whitening filters.
  std::vector<std::pair<std::string, Tensor<T>>> state() const;

  /// Batchnorm running statistics only.
  std::vector<std::pair<std::string, Tensor<T>>> buffers() const;

  const Tensor<T>& stem_filters() const { return stem_filters_; }

  /// Replaces the batchnorm running statistics with the plain average of
  /// train-mode batch statistics over `inputs`. No tape is recorded.
  void recalibrate_batchnorm(const std::vector<Tensor<T>>& inputs);

  /// Deep copy: no tensor storage is shared with the original.
  ResNet9 clone() const;

  /// Overwrites every state tensor from (name, values) pairs.
  void load_state(const std::vector<std::pair<std::string, Tensor<T>>>& state);

 private:
  explicit ResNet9(ModelSpec spec);

  ModelSpec spec_;
  Tensor<T> stem_filters_;  // defined only for the whitened stem
  Tensor<T> stem_weight_;   // 1×1 expansion
  Tensor<T> stem_bias_;
  ConvBnLayer<T> prep_;
  ConvBnLayer<T> layer1_;
  ResidualBranch<T> res1_;
  ConvBnLayer<T> layer2_;
  ConvBnLayer<T> layer3_;
  ResidualBranch<T> res3_;
  Tensor<T> fc_weight_;
  Tensor<T> fc_bias_;
  ParamSet<T> params_;
};

}  // namespace minitrain
