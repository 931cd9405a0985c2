#include "minitrain/resnet9.hpp"

#include <cmath>
#include <random>

#include <json.hpp>

namespace minitrain {

void ModelSpec::validate() const {
  if (classes < 2) throw ConfigError("model needs at least 2 classes");
  for (std::size_t w : widths) {
    if (w == 0) throw ConfigError("model widths must be positive");
  }
  if (input_channels == 0) throw ConfigError("model input channels must be positive");
  if (image_size < 8) throw ConfigError("model input must be at least 8x8 (three 2x pools)");
  if (!(head_scale > 0.0)) throw ConfigError("head scale must be positive");
  if (activation.kind == ActivationKind::kCelu && !(activation.alpha > 0.0)) {
    throw ConfigError("CELU alpha must be positive");
  }
  if (stem.kind == StemKind::kWhitened) {
    if (input_channels != 3) {
      throw ConfigError("whitened stem needs 3-channel input, model has " +
                        std::to_string(input_channels));
    }
    if (stem.filters.size() != kWhiteningFilterValues) {
      throw ConfigError("whitened stem needs 729 filter values, got " +
                        std::to_string(stem.filters.size()));
    }
    if (stem.expand_to == 0) throw ConfigError("stem expansion width must be positive");
  }
}

std::string model_spec_to_json(const ModelSpec& spec) {
  nlohmann::json j;
  j["widths"] = spec.widths;
  j["activation"] = spec.activation.kind == ActivationKind::kCelu ? "celu" : "relu";
  j["celu_alpha"] = spec.activation.alpha;
  j["stem"] = spec.stem.kind == StemKind::kWhitened ? "whitened" : "plain";
  j["stem_expand_to"] = spec.stem.expand_to;
  j["classes"] = spec.classes;
  j["input_channels"] = spec.input_channels;
  j["image_size"] = spec.image_size;
  j["head_scale"] = spec.head_scale;
  j["bn_momentum"] = spec.batchnorm.momentum;
  j["bn_eps"] = spec.batchnorm.eps;
  return j.dump(2);
}

ModelSpec model_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec is not valid JSON: ") + e.what());
  }
  ModelSpec spec;
  try {
    spec.widths = j.at("widths").get<std::array<std::size_t, 4>>();
    spec.activation.kind =
        j.at("activation").get<std::string>() == "celu" ? ActivationKind::kCelu
                                                        : ActivationKind::kRelu;
    spec.activation.alpha = j.at("celu_alpha").get<double>();
    spec.stem.kind = j.at("stem").get<std::string>() == "whitened" ? StemKind::kWhitened
                                                                   : StemKind::kPlain;
    spec.stem.expand_to = j.at("stem_expand_to").get<std::size_t>();
    spec.classes = j.at("classes").get<std::size_t>();
    spec.input_channels = j.at("input_channels").get<std::size_t>();
    spec.image_size = j.at("image_size").get<std::size_t>();
    spec.head_scale = j.at("head_scale").get<double>();
    spec.batchnorm.momentum = j.at("bn_momentum").get<double>();
    spec.batchnorm.eps = j.at("bn_eps").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model spec field error: ") + e.what());
  }
  return spec;
}

namespace {

template <typename T>
Tensor<T> activate(const Tensor<T>& x, const Activation& act) {
  return act.kind == ActivationKind::kCelu ? celu(x, act.alpha) : relu(x);
}

template <typename T>
ConvBnLayer<T> make_layer(std::size_t cin, std::size_t cout) {
  return ConvBnLayer<T>{Tensor<T>(Shape{cout, cin, 3, 3}), Tensor<T>(Shape{cout}, T(1)),
                        Tensor<T>(Shape{cout}, T(0)), BatchNormState<T>::create(cout)};
}

template <typename T>
void register_layer(ParamSet<T>& params, const std::string& prefix, ConvBnLayer<T>& layer) {
  params.add(prefix + ".conv.weight", layer.weight);
  params.add(prefix + ".bn.gamma", layer.gamma);
  params.add(prefix + ".bn.beta", layer.beta);
}

template <typename T>
void push_buffers(std::vector<std::pair<std::string, Tensor<T>>>& out, const std::string& prefix,
                  const ConvBnLayer<T>& layer) {
  out.emplace_back(prefix + ".bn.running_mean", layer.stats.running_mean);
  out.emplace_back(prefix + ".bn.running_var", layer.stats.running_var);
}

template <typename T>
void kaiming_fill(Tensor<T>& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (T& v : t.data()) v = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
Tensor<T> conv_bn_act(const Tensor<T>& x, ConvBnLayer<T>& layer, const Activation& act,
                      Mode mode, const BatchNormOptions& bn) {
  Tensor<T> y = conv2d(x, layer.weight, static_cast<const Tensor<T>*>(nullptr), 1, 1);
  y = batchnorm2d(y, layer.gamma, layer.beta, layer.stats, mode, bn);
  return activate(y, act);
}

template <typename T>
Tensor<T> residual_block(const Tensor<T>& x, ResidualBranch<T>& branch, const Activation& act,
                         Mode mode, const BatchNormOptions& bn) {
  const std::size_t c = x.rank() == 4 ? x.dim(1) : 0;
  if (branch.first.weight.dim(0) != c || branch.first.weight.dim(1) != c ||
      branch.second.weight.dim(0) != c || branch.second.weight.dim(1) != c) {
    throw ShapeError("residual_block: branch " + shape_str(branch.first.weight.shape()) + "/" +
                     shape_str(branch.second.weight.shape()) + " does not preserve input " +
                     shape_str(x.shape()));
  }
  Tensor<T> f = conv_bn_act(x, branch.first, act, mode, bn);
  f = conv_bn_act(f, branch.second, act, mode, bn);
  return add(x, f);
}

template <typename T>
ResNet9<T>::ResNet9(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto [w0, w1, w2, w3] = spec_.widths;
  std::size_t prep_in = spec_.input_channels;
  if (spec_.stem.kind == StemKind::kWhitened) {
    std::vector<T> f(spec_.stem.filters.begin(), spec_.stem.filters.end());
    stem_filters_ = Tensor<T>(Shape{kWhiteningFilterCount, 3, 3, 3}, std::move(f));
    stem_weight_ = Tensor<T>(Shape{spec_.stem.expand_to, kWhiteningFilterCount, 1, 1});
    stem_bias_ = Tensor<T>(Shape{spec_.stem.expand_to});
    params_.add("stem.expand.weight", stem_weight_);
    params_.add("stem.expand.bias", stem_bias_);
    prep_in = spec_.stem.expand_to;
  }
  prep_ = make_layer<T>(prep_in, w0);
  layer1_ = make_layer<T>(w0, w1);
  res1_ = {make_layer<T>(w1, w1), make_layer<T>(w1, w1)};
  layer2_ = make_layer<T>(w1, w2);
  layer3_ = make_layer<T>(w2, w3);
  res3_ = {make_layer<T>(w3, w3), make_layer<T>(w3, w3)};
  fc_weight_ = Tensor<T>(Shape{spec_.classes, w3});
  fc_bias_ = Tensor<T>(Shape{spec_.classes});

  register_layer(params_, "prep", prep_);
  register_layer(params_, "layer1", layer1_);
  register_layer(params_, "res1.a", res1_.first);
  register_layer(params_, "res1.b", res1_.second);
  register_layer(params_, "layer2", layer2_);
  register_layer(params_, "layer3", layer3_);
  register_layer(params_, "res3.a", res3_.first);
  register_layer(params_, "res3.b", res3_.second);
  params_.add("fc.weight", fc_weight_);
  params_.add("fc.bias", fc_bias_);
}

template <typename T>
ResNet9<T> ResNet9<T>::build(const ModelSpec& spec, std::uint64_t seed) {
  ResNet9 model(spec);
  std::mt19937_64 rng(seed);
  for (auto& entry : model.params_) {
    if (entry.tensor.rank() < 2) continue;  // gammas keep 1, betas and biases keep 0
    const Shape& s = entry.tensor.shape();
    kaiming_fill(entry.tensor, shape_numel(s) / s[0], rng);
  }
  return model;
}

template <typename T>
Tensor<T> ResNet9<T>::forward(const Tensor<T>& x, Mode mode) {
  const std::size_t sz = spec_.image_size;
  if (x.rank() != 4 || x.dim(1) != spec_.input_channels || x.dim(2) != sz || x.dim(3) != sz) {
    throw ShapeError("ResNet9 expects input [N," + std::to_string(spec_.input_channels) + "," +
                     std::to_string(sz) + "," + std::to_string(sz) + "], got " +
                     shape_str(x.shape()));
  }
  const auto& act = spec_.activation;
  const auto& bn = spec_.batchnorm;
  Tensor<T> h = x;
  if (spec_.stem.kind == StemKind::kWhitened) {
    h = conv2d(h, stem_filters_, static_cast<const Tensor<T>*>(nullptr), 1, 1);
    h = conv2d(h, stem_weight_, &stem_bias_, 1, 0);
  }
  h = conv_bn_act(h, prep_, act, mode, bn);
  h = maxpool2d(conv_bn_act(h, layer1_, act, mode, bn), 2, 2);
  h = residual_block(h, res1_, act, mode, bn);
  h = maxpool2d(conv_bn_act(h, layer2_, act, mode, bn), 2, 2);
  h = maxpool2d(conv_bn_act(h, layer3_, act, mode, bn), 2, 2);
  h = residual_block(h, res3_, act, mode, bn);
  h = global_maxpool(h);
  h = linear(h, fc_weight_, &fc_bias_);
  return scale(h, spec_.head_scale);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ResNet9<T>::buffers() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  push_buffers(out, "prep", prep_);
  push_buffers(out, "layer1", layer1_);
  push_buffers(out, "res1.a", res1_.first);
  push_buffers(out, "res1.b", res1_.second);
  push_buffers(out, "layer2", layer2_);
  push_buffers(out, "layer3", layer3_);
  push_buffers(out, "res3.a", res3_.first);
  push_buffers(out, "res3.b", res3_.second);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ResNet9<T>::state() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  if (stem_filters_.defined()) out.emplace_back("stem.whiten.filters", stem_filters_);
  for (const auto& e : params_) out.emplace_back(e.name, e.tensor);
  for (auto& b : buffers()) out.push_back(std::move(b));
  return out;
}

template <typename T>
void ResNet9<T>::load_state(const std::vector<std::pair<std::string, Tensor<T>>>& src) {
  auto dst = state();
  if (src.size() != dst.size()) {
    throw ShapeError("state has " + std::to_string(src.size()) + " tensors, model expects " +
                     std::to_string(dst.size()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (src[i].first != dst[i].first || src[i].second.shape() != dst[i].second.shape()) {
      throw ShapeError("state mismatch: " + src[i].first + " " +
                       shape_str(src[i].second.shape()) + " vs " + dst[i].first + " " +
                       shape_str(dst[i].second.shape()));
    }
    auto values = src[i].second.data();
    std::copy(values.begin(), values.end(), dst[i].second.data().begin());
  }
}

template <typename T>
void ResNet9<T>::recalibrate_batchnorm(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) return;
  typename Tape<T>::Suspend no_tape;
  const BatchNormOptions saved = spec_.batchnorm;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    // Cumulative average: batch k enters with weight 1/(k+1).
    spec_.batchnorm.momentum = 1.0 / static_cast<double>(k + 1);
    forward(inputs[k], Mode::kTrain);
  }
  spec_.batchnorm = saved;
}

template <typename T>
ResNet9<T> ResNet9<T>::clone() const {
  ResNet9 copy(spec_);
  copy.load_state(state());
  return copy;
}

template class ResNet9<float>;
template class ResNet9<double>;
template Tensor<float> residual_block(const Tensor<float>&, ResidualBranch<float>&,
                                      const Activation&, Mode, const BatchNormOptions&);
template Tensor<double> residual_block(const Tensor<double>&, ResidualBranch<double>&,
                                       const Activation&, Mode, const BatchNormOptions&);
template Tensor<float> conv_bn_act(const Tensor<float>&, ConvBnLayer<float>&, const Activation&,
                                   Mode, const BatchNormOptions&);
template Tensor<double> conv_bn_act(const Tensor<double>&, ConvBnLayer<double>&,
                                    const Activation&, Mode, const BatchNormOptions&);

}  // namespace minitrain
