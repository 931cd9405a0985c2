#include "minitrain/learner.hpp"

namespace minitrain {

template <typename T>
double ResNetLearner<T>::loss_and_grads(const Batch<T>& batch) {
  Tape<T> tape;
  Tensor<T> logits = model_.forward(batch.inputs, Mode::kTrain);
  auto ce = smoothed_cross_entropy(logits, batch.labels, label_smoothing_);
  tape.backward(ce.loss);
  return static_cast<double>(ce.loss.item());
}

template <typename T>
Tensor<T> ResNetLearner<T>::predict(const Tensor<T>& inputs) {
  typename Tape<T>::Suspend no_tape;
  return model_.forward(inputs, Mode::kEval);
}

template class ResNetLearner<float>;
template class ResNetLearner<double>;

}  // namespace minitrain
