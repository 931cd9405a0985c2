#pragma once

#include <memory>
#include <vector>

#include "minitrain/preprocess.hpp"
#include "minitrain/resnet9.hpp"

namespace minitrain {

/// A trainable model as seen by the training loops: deep-copyable, exposes
/// its parameters, and computes a batch loss with gradients.
template <typename T>
class Learner {
 public:
  virtual ~Learner() = default;

  /// Deep copy of parameters and any normalization state.
  virtual std::unique_ptr<Learner> clone() const = 0;

  virtual ParamSet<T>& params() = 0;

  /// Train-mode loss on `batch`; gradients accumulate into params().
  virtual double loss_and_grads(const Batch<T>& batch) = 0;

  /// Eval-mode logits [N,K], no gradients.
  virtual Tensor<T> predict(const Tensor<T>& inputs) = 0;

  /// Re-estimates normalization statistics from full-data inputs.
  virtual void recalibrate(const std::vector<Tensor<T>>& /*inputs*/) {}
};

/// ResNet-9 with label-smoothed cross entropy.
template <typename T>
class ResNetLearner final : public Learner<T> {
 public:
  ResNetLearner(ResNet9<T> model, double label_smoothing)
      : model_(std::move(model)), label_smoothing_(label_smoothing) {}

  std::unique_ptr<Learner<T>> clone() const override {
    return std::make_unique<ResNetLearner>(model_.clone(), label_smoothing_);
  }
  ParamSet<T>& params() override { return model_.params(); }
  double loss_and_grads(const Batch<T>& batch) override;
  Tensor<T> predict(const Tensor<T>& inputs) override;
  void recalibrate(const std::vector<Tensor<T>>& inputs) override {
    model_.recalibrate_batchnorm(inputs);
  }

  ResNet9<T>& model() { return model_; }
  const ResNet9<T>& model() const { return model_; }
  double label_smoothing() const { return label_smoothing_; }

 private:
  ResNet9<T> model_;
  double label_smoothing_;
};

}  // namespace minitrain
