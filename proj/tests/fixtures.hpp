#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "minitrain/cifar.hpp"
#include "minitrain/learner.hpp"
#include "minitrain/ops.hpp"
#include "minitrain/preprocess.hpp"
#include "minitrain/tape.hpp"

namespace fixtures {

using minitrain::Dataset;
using minitrain::Shape;
using minitrain::Tensor;

/// Class c gets its own mean color and stripe frequency plus uniform noise,
/// so small models can separate classes.
inline Dataset synthetic_cifar(std::size_t per_class, std::uint64_t seed,
                               minitrain::Split split = minitrain::Split::kTrain,
                               int noise = 40) {
  Dataset ds;
  ds.split = split;
  ds.source_digest = "synthetic-" + std::to_string(seed);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> jitter(-noise, noise);
  for (std::size_t i = 0; i < per_class; ++i) {
    for (int c = 0; c < 10; ++c) {
      ds.labels.push_back(c);
      const int base[3] = {40 + 20 * c, 220 - 18 * c, 60 + 15 * ((c * 7) % 10)};
      for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < 32; ++y) {
          for (int x = 0; x < 32; ++x) {
            const int stripe = ((y * (c % 4 + 1) / 4 + x * (c / 4)) % 2) ? 25 : -25;
            const int v = base[ch] + stripe + jitter(rng);
            ds.images.push_back(static_cast<std::uint8_t>(std::clamp(v, 0, 255)));
          }
        }
      }
    }
  }
  // Interleave so records are not sorted by class.
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  return minitrain::select_records(ds, order);
}

/// Logits = W·f + b over the per-channel means f of the input images.
/// Gradients flow into W [10,3] and b [10] only.
template <typename T>
class LinearLearner final : public minitrain::Learner<T> {
 public:
  explicit LinearLearner(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 0.3);
    std::vector<T> w(30);
    for (auto& v : w) v = static_cast<T>(d(rng));
    params_.add("fc.weight", Tensor<T>(Shape{10, 3}, w));
    params_.add("fc.bias", Tensor<T>(Shape{10}, T(0)));
  }

  std::unique_ptr<minitrain::Learner<T>> clone() const override {
    auto out = std::make_unique<LinearLearner>(0);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto src = params_[i].tensor.data();
      std::copy(src.begin(), src.end(), out->params_[i].tensor.data().begin());
    }
    return out;
  }
  minitrain::ParamSet<T>& params() override { return params_; }

  static Tensor<T> features(const Tensor<T>& x) {
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor<T> f(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t p = 0; p < hw; ++p) s += x.ptr()[(i * c + ch) * hw + p];
        f.ptr()[i * c + ch] = static_cast<T>(s / static_cast<double>(hw));
      }
    }
    return f;
  }

  double loss_and_grads(const minitrain::Batch<T>& batch) override {
    minitrain::Tape<T> tape;
    Tensor<T> logits =
        minitrain::linear(features(batch.inputs), params_[0].tensor, &params_[1].tensor);
    auto ce = minitrain::smoothed_cross_entropy(logits, batch.labels, 0.0);
    tape.backward(ce.loss);
    return static_cast<double>(ce.loss.item());
  }

  Tensor<T> predict(const Tensor<T>& inputs) override {
    typename minitrain::Tape<T>::Suspend guard;
    return minitrain::linear(features(inputs), params_[0].tensor, &params_[1].tensor);
  }

 private:
  minitrain::ParamSet<T> params_;
};

/// Direct six-loop cross-correlation.
inline std::vector<double> naive_conv(const std::vector<double>& x, const Shape& xs,
                                      const std::vector<double>& w, const Shape& ws,
                                      const std::vector<double>* bias, std::size_t stride,
                                      std::size_t pad, Shape& out_shape) {
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::size_t cout = ws[0], kh = ws[2], kw = ws[3];
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  out_shape = {n, cout, oh, ow};
  std::vector<double> y(n * cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd))
                  continue;
                acc += x[((b * cin + c) * h + yy) * wd + xx] * w[((o * cin + c) * kh + u) * kw + v];
              }
          y[((b * cout + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

inline std::vector<double> naive_maxpool(const std::vector<double>& x, const Shape& xs,
                                         std::size_t k, std::size_t stride) {
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  std::vector<double> y;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double m = -INFINITY;
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v)
              m = std::max(m, x[((b * c + ch) * h + i * stride + u) * w + j * stride + v]);
          y.push_back(m);
        }
  return y;
}

inline std::vector<double> naive_linear(const std::vector<double>& x, std::size_t n,
                                        std::size_t d, const std::vector<double>& w,
                                        std::size_t k, const std::vector<double>* b) {
  std::vector<double> y(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < k; ++o) {
      double acc = b ? (*b)[o] : 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += x[i * d + j] * w[o * d + j];
      y[i * k + o] = acc;
    }
  return y;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Independent MLTP oracle for LinearLearner weights (W[10,3] then b[10]):
/// hand-computed features, full-batch softmax gradient, coupled decay on W,
/// per-task velocity kept across rounds, then w += beta·(mean_t w_t − w).
/// Returns the shared weights after every round.
inline std::vector<std::vector<double>> reference_mltp_linear(
    const std::vector<Dataset>& tasks, const minitrain::ChannelStats& stats,
    std::vector<double> w, int rounds, int inner_steps, double lr, double m, double lam,
    double beta) {
  const std::size_t nt = tasks.size();
  std::vector<std::vector<double>> feats(nt);
  for (std::size_t t = 0; t < nt; ++t)
    for (std::size_t i = 0; i < tasks[t].size(); ++i)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int p = 0; p < 1024; ++p)
          s += (tasks[t].image(i)[c * 1024 + p] / 255.0 - stats.mean[c]) / stats.std[c];
        feats[t].push_back(s / 1024.0);
      }
  std::vector<std::vector<double>> vel(nt, std::vector<double>(40, 0.0)), out;
  for (int r = 0; r < rounds; ++r) {
    std::vector<double> mean(40, 0.0);
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<double> wt = w;
      const double n = static_cast<double>(tasks[t].size());
      for (int s = 0; s < inner_steps; ++s) {
        std::vector<double> g(40, 0.0);
        for (std::size_t i = 0; i < tasks[t].size(); ++i) {
          double z[10], zmax = -1e300, sum = 0.0;
          for (int k = 0; k < 10; ++k) {
            z[k] = wt[30 + k];
            for (int c = 0; c < 3; ++c) z[k] += wt[k * 3 + c] * feats[t][i * 3 + c];
            zmax = std::max(zmax, z[k]);
          }
          for (double& v : z) sum += (v = std::exp(v - zmax));
          for (int k = 0; k < 10; ++k) {
            const double d = (z[k] / sum - (tasks[t].labels[i] == k ? 1.0 : 0.0)) / n;
            g[30 + k] += d;
            for (int c = 0; c < 3; ++c) g[k * 3 + c] += d * feats[t][i * 3 + c];
          }
        }
        for (int j = 0; j < 40; ++j) {
          if (j < 30) g[j] += 2 * lam * wt[j];
          vel[t][j] = m * vel[t][j] + g[j];
          wt[j] -= lr * vel[t][j];
        }
      }
      for (int j = 0; j < 40; ++j) mean[j] += wt[j] / static_cast<double>(nt);
    }
    for (int j = 0; j < 40; ++j) w[j] += beta * (mean[j] - w[j]);
    out.push_back(w);
  }
  return out;
}

}  // namespace fixtures
