#include "minitrain/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace minitrain {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Upper bound on the number of im2col columns materialized at once.
constexpr std::size_t kColumnBudget = 8192;

void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " +
                     std::to_string(rank) + ", got " + shape_str(shape));
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, kh, kw, stride, pad, ho, wo;
  std::size_t patch() const { return cin * kh * kw; }
  std::size_t out_plane() const { return ho * wo; }
};

// Fills col[(c*kh+ky)*kw+kx][b*HWo + oy*wo + ox] for samples [n0, n0+nb).
template <typename T>
void im2col(const ConvGeometry& g, const T* x, std::size_t n0, std::size_t nb, T* col) {
  const std::size_t cols = nb * g.out_plane();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* dst = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < nb; ++b) {
          const T* src = x + ((n0 + b) * g.cin + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            T* row = dst + (b * g.ho + oy) * g.wo;
            if (iy < 0 || iy >= static_cast<long>(g.h)) {
              std::fill(row, row + g.wo, T(0));
              continue;
            }
            const T* srow = src + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              row[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0)
                                                                  : srow[static_cast<std::size_t>(ix)];
            }
          }
        }
      }
    }
  }
}

// Scatter-adds col back into dx; inverse layout of im2col.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, std::size_t n0, std::size_t nb, T* dx) {
  const std::size_t cols = nb * g.out_plane();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* src = col + ((c * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t b = 0; b < nb; ++b) {
          T* dst = dx + ((n0 + b) * g.cin + c) * g.h * g.w;
          for (std::size_t oy = 0; oy < g.ho; ++oy) {
            const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
            if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
            const T* row = src + (b * g.ho + oy) * g.wo;
            T* drow = dst + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.wo; ++ox) {
              const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
              if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
              drow[static_cast<std::size_t>(ix)] += row[ox];
            }
          }
        }
      }
    }
  }
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  const auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = fwd(xs[i]);
  if (Tape<T>::should_record({&x})) {
    Tape<T>::active()->record(out, [x, out, deriv]() mutable {
      if (!x.requires_grad()) return;
      auto gx = x.ensure_grad();
      const auto gy = out.grad();
      const auto xs = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * deriv(xs[i]);
    });
  }
  return out;
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                 std::size_t stride, std::size_t pad) {
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(w.shape(), 4, "conv2d", "weight");
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                 stride, pad, 0, 0};
  if (w.dim(1) != g.cin) {
    throw ShapeError("conv2d: input has " + std::to_string(g.cin) +
                     " channels but weight " + shape_str(w.shape()) + " expects " +
                     std::to_string(w.dim(1)));
  }
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                     shape_str(x.shape()));
  }
  if (bias != nullptr && bias->shape() != Shape{g.cout}) {
    throw ShapeError("conv2d: bias must have shape [" + std::to_string(g.cout) + "], got " +
                     shape_str(bias->shape()));
  }
  g.ho = (g.h + 2 * pad - g.kh) / stride + 1;
  g.wo = (g.w + 2 * pad - g.kw) / stride + 1;

  Tensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  const std::size_t plane = g.out_plane();
  const std::size_t chunk = std::clamp<std::size_t>(kColumnBudget / plane, 1, g.n);
  const std::size_t patch = g.patch();
  Eigen::Map<const RowMat<T>> wm(w.ptr(), static_cast<Eigen::Index>(g.cout),
                                 static_cast<Eigen::Index>(patch));
  RowMat<T> col;
  RowMat<T> res;
  for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
    const std::size_t nb = std::min(chunk, g.n - n0);
    const std::size_t cols = nb * plane;
    col.resize(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cols));
    im2col(g, x.ptr(), n0, nb, col.data());
    res.noalias() = wm * col;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const T* src = res.data() + co * cols + b * plane;
        T* dst = out.ptr() + ((n0 + b) * g.cout + co) * plane;
        const T bv = bias ? bias->ptr()[co] : T(0);
        for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + bv;
      }
    }
  }

  Tensor<T> b = bias ? *bias : Tensor<T>();
  if (Tape<T>::should_record({&x, &w, bias})) {
    Tape<T>::active()->record(out, [x, w, b, out, g, chunk]() mutable {
      const std::size_t plane = g.out_plane();
      const std::size_t patch = g.patch();
      const T* gy = out.grad().data();
      const bool need_x = x.requires_grad();
      const bool need_w = w.requires_grad();
      const bool need_b = b.defined() && b.requires_grad();
      T* gx = need_x ? x.ensure_grad().data() : nullptr;
      if (need_b) {
        auto gb = b.ensure_grad();
        for (std::size_t n = 0; n < g.n; ++n) {
          for (std::size_t co = 0; co < g.cout; ++co) {
            const T* src = gy + (n * g.cout + co) * plane;
            T acc = T(0);
            for (std::size_t p = 0; p < plane; ++p) acc += src[p];
            gb[co] += acc;
          }
        }
      }
      if (!need_x && !need_w) return;
      Eigen::Map<const RowMat<T>> wm(w.ptr(), static_cast<Eigen::Index>(g.cout),
                                     static_cast<Eigen::Index>(patch));
      RowMat<T> gmat, col, dcol;
      RowMat<T> dw;
      if (need_w) dw = RowMat<T>::Zero(static_cast<Eigen::Index>(g.cout),
                                       static_cast<Eigen::Index>(patch));
      for (std::size_t n0 = 0; n0 < g.n; n0 += chunk) {
        const std::size_t nb = std::min(chunk, g.n - n0);
        const std::size_t cols = nb * plane;
        gmat.resize(static_cast<Eigen::Index>(g.cout), static_cast<Eigen::Index>(cols));
        for (std::size_t b = 0; b < nb; ++b) {
          for (std::size_t co = 0; co < g.cout; ++co) {
            std::copy_n(gy + ((n0 + b) * g.cout + co) * plane, plane,
                        gmat.data() + co * cols + b * plane);
          }
        }
        if (need_w) {
          col.resize(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(cols));
          im2col(g, x.ptr(), n0, nb, col.data());
          dw.noalias() += gmat * col.transpose();
        }
        if (need_x) {
          dcol.noalias() = wm.transpose() * gmat;
          col2im(g, dcol.data(), n0, nb, gx);
        }
      }
      if (need_w) {
        auto gw = w.ensure_grad();
        for (std::size_t i = 0; i < gw.size(); ++i) gw[i] += dw.data()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  require_rank(x.shape(), 4, "maxpool2d", "input");
  if (k == 0 || stride == 0) throw ConfigError("maxpool2d: window and stride must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h || k > w) {
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                     shape_str(x.shape()));
  }
  const std::size_t ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  Tensor<T> out(Shape{n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const T* xs = x.ptr();
  T* ys = out.ptr();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + oy * stride * w + ox * stride;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t idx = base + (oy * stride + ky) * w + ox * stride + kx;
            if (xs[idx] > xs[best]) best = idx;
          }
        }
        ys[o] = xs[best];
        (*argmax)[o] = best;
      }
    }
  }
  if (Tape<T>::should_record({&x})) {
    Tape<T>::active()->record(out, [x, out, argmax]() mutable {
      if (!x.requires_grad()) return;
      auto gx = x.ensure_grad();
      const auto gy = out.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_maxpool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "global_maxpool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> out(Shape{n, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(n * c);
  const T* xs = x.ptr();
  for (std::size_t i = 0; i < n * c; ++i) {
    std::size_t best = i * plane;
    for (std::size_t p = 1; p < plane; ++p) {
      if (xs[i * plane + p] > xs[best]) best = i * plane + p;
    }
    out.ptr()[i] = xs[best];
    (*argmax)[i] = best;
  }
  if (Tape<T>::should_record({&x})) {
    Tape<T>::active()->record(out, [x, out, argmax]() mutable {
      if (!x.requires_grad()) return;
      auto gx = x.ensure_grad();
      const auto gy = out.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[(*argmax)[i]] += gy[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  require_rank(x.shape(), 2, "linear", "input");
  require_rank(w.shape(), 2, "linear", "weight");
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (w.dim(1) != d) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  }
  if (bias != nullptr && bias->shape() != Shape{k}) {
    throw ShapeError("linear: bias must have shape [" + std::to_string(k) + "], got " +
                     shape_str(bias->shape()));
  }
  const auto ni = static_cast<Eigen::Index>(n), di = static_cast<Eigen::Index>(d),
             ki = static_cast<Eigen::Index>(k);
  Tensor<T> out(Shape{n, k});
  Eigen::Map<const RowMat<T>> xm(x.ptr(), ni, di);
  Eigen::Map<const RowMat<T>> wm(w.ptr(), ki, di);
  Eigen::Map<RowMat<T>> ym(out.ptr(), ni, ki);
  ym.noalias() = xm * wm.transpose();
  if (bias != nullptr) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) out.ptr()[r * k + j] += bias->ptr()[j];
    }
  }
  Tensor<T> b = bias ? *bias : Tensor<T>();
  if (Tape<T>::should_record({&x, &w, bias})) {
    Tape<T>::active()->record(out, [x, w, b, out, ni, di, ki]() mutable {
      Eigen::Map<const RowMat<T>> gy(out.grad().data(), ni, ki);
      if (x.requires_grad()) {
        Eigen::Map<RowMat<T>> gx(x.ensure_grad().data(), ni, di);
        Eigen::Map<const RowMat<T>> wm(w.ptr(), ki, di);
        gx.noalias() += gy * wm;
      }
      if (w.requires_grad()) {
        Eigen::Map<RowMat<T>> gw(w.ensure_grad().data(), ki, di);
        Eigen::Map<const RowMat<T>> xm(x.ptr(), ni, di);
        gw.noalias() += gy.transpose() * xm;
      }
      if (b.defined() && b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (Eigen::Index r = 0; r < ni; ++r) {
          for (Eigen::Index j = 0; j < ki; ++j) gb[static_cast<std::size_t>(j)] += gy(r, j);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      BatchNormState<T>& state, Mode mode, BatchNormOptions options) {
  require_rank(x.shape(), 4, "batchnorm2d", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  const Shape cshape{c};
  if (gamma.shape() != cshape || beta.shape() != cshape ||
      state.running_mean.shape() != cshape || state.running_var.shape() != cshape) {
    throw ShapeError("batchnorm2d: per-channel tensors must have shape " + shape_str(cshape));
  }
  const std::size_t count = n * plane;
  Tensor<T> out(x.shape());
  // Per-channel normalization constants used by the backward rule.
  auto mean = std::make_shared<std::vector<T>>(c);
  auto invstd = std::make_shared<std::vector<T>>(c);
  const T* xs = x.ptr();
  T* ys = out.ptr();
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mu, var;
    if (mode == Mode::kTrain) {
      double acc = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* src = xs + (s * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += static_cast<double>(src[p]);
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const T* src = xs + (s * c + ch) * plane;
        for (std::size_t p = 0; p < plane; ++p) {
          const double dv = static_cast<double>(src[p]) - mu;
          sq += dv * dv;
        }
      }
      var = sq / static_cast<double>(count);
      T& rm = state.running_mean.ptr()[ch];
      T& rv = state.running_var.ptr()[ch];
      const double m = options.momentum;
      rm = static_cast<T>((1.0 - m) * static_cast<double>(rm) + m * mu);
      rv = static_cast<T>((1.0 - m) * static_cast<double>(rv) + m * var);
    } else {
      mu = static_cast<double>(state.running_mean.ptr()[ch]);
      var = static_cast<double>(state.running_var.ptr()[ch]);
    }
    (*mean)[ch] = static_cast<T>(mu);
    (*invstd)[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
    const T g = gamma.ptr()[ch], b = beta.ptr()[ch], m = (*mean)[ch], is = (*invstd)[ch];
    for (std::size_t s = 0; s < n; ++s) {
      const T* src = xs + (s * c + ch) * plane;
      T* dst = ys + (s * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[p] = g * ((src[p] - m) * is) + b;
    }
  }
  if (Tape<T>::should_record({&x, &gamma, &beta})) {
    const bool train = mode == Mode::kTrain;
    Tape<T>::active()->record(out, [x, gamma, beta, out, mean, invstd, n, c, plane,
                                    train]() mutable {
      const T* gy = out.grad().data();
      const T* xs = x.ptr();
      const std::size_t count = n * plane;
      T* gx = x.requires_grad() ? x.ensure_grad().data() : nullptr;
      T* gg = gamma.requires_grad() ? gamma.ensure_grad().data() : nullptr;
      T* gb = beta.requires_grad() ? beta.ensure_grad().data() : nullptr;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T m = (*mean)[ch], is = (*invstd)[ch], g = gamma.ptr()[ch];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          const std::size_t off = (s * c + ch) * plane;
          for (std::size_t p = 0; p < plane; ++p) {
            const double dy = static_cast<double>(gy[off + p]);
            sum_dy += dy;
            sum_dy_xhat += dy * static_cast<double>((xs[off + p] - m) * is);
          }
        }
        if (gg) gg[ch] += static_cast<T>(sum_dy_xhat);
        if (gb) gb[ch] += static_cast<T>(sum_dy);
        if (!gx) continue;
        if (train) {
          const T k = g * is / static_cast<T>(count);
          const T mdy = static_cast<T>(sum_dy);
          const T mdx = static_cast<T>(sum_dy_xhat);
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              const T xhat = (xs[off + p] - m) * is;
              gx[off + p] += k * (static_cast<T>(count) * gy[off + p] - mdy - xhat * mdx);
            }
          }
        } else {
          const T k = g * is;
          for (std::size_t s = 0; s < n; ++s) {
            const std::size_t off = (s * c + ch) * plane;
            for (std::size_t p = 0; p < plane; ++p) gx[off + p] += k * gy[off + p];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> celu(const Tensor<T>& x, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("celu: alpha must be positive");
  const T a = static_cast<T>(alpha);
  return unary(
      x, [a](T v) { return v >= T(0) ? v : a * std::expm1(v / a); },
      [a](T v) { return v >= T(0) ? T(1) : std::exp(v / a); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary(x, [f](T v) { return v * f; }, [f](T) { return f; });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (Tape<T>::should_record({&a, &b})) {
    Tape<T>::active()->record(out, [a, b, out]() mutable {
      const auto gy = out.grad();
      for (const Tensor<T>* in : {&a, &b}) {
        if (!in->requires_grad()) continue;
        auto g = in->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (Tape<T>::should_record({&a, &b})) {
    Tape<T>::active()->record(out, [a, b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto g = a.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * b.ptr()[i];
      }
      if (b.requires_grad()) {
        auto g = b.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gy[i] * a.ptr()[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  if (Tape<T>::should_record({&x})) {
    Tape<T>::active()->record(out, [x, out]() mutable {
      if (!x.requires_grad()) return;
      const T gy = out.grad()[0];
      for (T& g : x.ensure_grad()) g += gy;
    });
  }
  return out;
}

template <typename T>
Tensor<T> smoothed_targets(std::span<const int> labels, double alpha, std::size_t classes) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("label smoothing factor must lie in [0,1], got " + std::to_string(alpha));
  }
  if (classes < 2) throw ConfigError("label smoothing needs at least 2 classes");
  if (labels.empty()) throw ShapeError("label smoothing needs at least one label");
  const T off = static_cast<T>(alpha / static_cast<double>(classes));
  const T on = static_cast<T>((1.0 - alpha) + alpha / static_cast<double>(classes));
  Tensor<T> t(Shape{labels.size(), classes}, off);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0," + std::to_string(classes) + ")");
    }
    t.ptr()[i * classes + static_cast<std::size_t>(labels[i])] = on;
  }
  return t;
}

template <typename T>
CrossEntropyResult<T> smoothed_cross_entropy(const Tensor<T>& logits,
                                             std::span<const int> labels, double alpha) {
  require_rank(logits.shape(), 2, "smoothed_cross_entropy", "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw ShapeError("smoothed_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " rows");
  }
  Tensor<T> targets = smoothed_targets<T>(labels, alpha, k);
  auto probs = std::make_shared<std::vector<T>>(n * k);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = logits.ptr() + r * k;
    const T mx = *std::max_element(row, row + k);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j] - mx));
    const double lse = static_cast<double>(mx) + std::log(z);
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = static_cast<double>(row[j]) - lse;
      (*probs)[r * k + j] = static_cast<T>(std::exp(lp));
      total -= static_cast<double>(targets.ptr()[r * k + j]) * lp;
    }
  }
  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n)));
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("smoothed_cross_entropy produced a non-finite loss");
  }
  if (Tape<T>::should_record({&logits})) {
    Tape<T>::active()->record(loss, [logits, loss, targets, probs, n]() mutable {
      if (!logits.requires_grad()) return;
      const T g = loss.grad()[0] / static_cast<T>(n);
      auto gl = logits.ensure_grad();
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * ((*probs)[i] - targets.ptr()[i]);
    });
  }
  return {loss, targets};
}

#define MINITRAIN_INSTANTIATE_OPS(T)                                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,           \
                            std::size_t, std::size_t);                                      \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t);                 \
  template Tensor<T> global_maxpool(const Tensor<T>&);                                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);          \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                 BatchNormState<T>&, Mode, BatchNormOptions);               \
  template Tensor<T> celu(const Tensor<T>&, double);                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, double);                                       \
  template Tensor<T> sum(const Tensor<T>&);                                                 \
  template Tensor<T> smoothed_targets(std::span<const int>, double, std::size_t);           \
  template CrossEntropyResult<T> smoothed_cross_entropy(const Tensor<T>&,                   \
                                                        std::span<const int>, double);

MINITRAIN_INSTANTIATE_OPS(float)
MINITRAIN_INSTANTIATE_OPS(double)

}  // namespace minitrain
