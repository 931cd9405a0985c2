#include "minitrain/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace minitrain {

ChannelStats compute_channel_stats(const Dataset& ds) {
  if (ds.size() == 0) throw DataError("cannot compute channel statistics of an empty dataset");
  constexpr std::size_t plane = kImageSide * kImageSide;
  ChannelStats stats;
  const double count = static_cast<double>(ds.size() * plane);
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.images.data() + i * kImageBytes + c * plane;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k] / 255.0;
    }
    const double mean = acc / count;
    double sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.images.data() + i * kImageBytes + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const double d = p[k] / 255.0 - mean;
        sq += d * d;
      }
    }
    stats.mean[c] = mean;
    stats.std[c] = std::max(std::sqrt(sq / count), kStdFloor);
  }
  return stats;
}

template <typename T>
Tensor<T> normalize(const Dataset& ds, std::span<const std::size_t> indices,
                    const ChannelStats& stats) {
  if (indices.empty()) throw DataError("normalize: empty selection");
  constexpr std::size_t plane = kImageSide * kImageSide;
  Tensor<T> out(Shape{indices.size(), kImageChannels, kImageSide, kImageSide});
  T* dst = out.ptr();
  for (std::size_t n = 0; n < indices.size(); ++n) {
    auto img = ds.image(indices[n]);
    for (std::size_t c = 0; c < kImageChannels; ++c) {
      const double m = stats.mean[c], s = stats.std[c];
      for (std::size_t k = 0; k < plane; ++k) {
        *dst++ = static_cast<T>((img[c * plane + k] / 255.0 - m) / s);
      }
    }
  }
  return out;
}

AugmentDraw draw_augment(std::mt19937_64& rng, double flip_probability) {
  std::uniform_int_distribution<std::size_t> offset(0, 2 * kAugmentPad);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  AugmentDraw d;
  d.dy = offset(rng);
  d.dx = offset(rng);
  d.flip = coin(rng) < flip_probability;
  return d;
}

template <typename T>
void flip_horizontal(std::span<T> image, std::size_t channels, std::size_t height,
                     std::size_t width) {
  for (std::size_t row = 0; row < channels * height; ++row) {
    std::reverse(image.begin() + static_cast<std::ptrdiff_t>(row * width),
                 image.begin() + static_cast<std::ptrdiff_t>((row + 1) * width));
  }
}

template <typename T>
void apply_augment(std::span<T> image, std::size_t channels, const AugmentDraw& draw) {
  constexpr std::size_t side = kImageSide;
  constexpr long pad = static_cast<long>(kAugmentPad);
  auto reflect = [](long p) {
    if (p < 0) return -p;
    if (p >= static_cast<long>(side)) return 2 * static_cast<long>(side - 1) - p;
    return p;
  };
  std::vector<T> src(image.begin(), image.end());
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = src.data() + c * side * side;
    T* out = image.data() + c * side * side;
    for (std::size_t y = 0; y < side; ++y) {
      const long sy = reflect(static_cast<long>(y + draw.dy) - pad);
      for (std::size_t x = 0; x < side; ++x) {
        const long sx = reflect(static_cast<long>(x + draw.dx) - pad);
        out[y * side + x] = plane[sy * static_cast<long>(side) + sx];
      }
    }
  }
  if (draw.flip) flip_horizontal(image, channels, side, side);
}

template <typename T>
Tensor<T> augment(const Tensor<T>& batch, std::mt19937_64& rng, double flip_probability) {
  if (batch.rank() != 4 || batch.dim(2) != kImageSide || batch.dim(3) != kImageSide) {
    throw ShapeError("augment expects [N,C,32,32], got " + shape_str(batch.shape()));
  }
  Tensor<T> out = batch.clone();
  const std::size_t channels = batch.dim(1);
  const std::size_t per_image = channels * kImageSide * kImageSide;
  for (std::size_t n = 0; n < batch.dim(0); ++n) {
    const AugmentDraw d = draw_augment(rng, flip_probability);
    apply_augment(out.data().subspan(n * per_image, per_image), channels, d);
  }
  return out;
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch) {
  // splitmix64 finalizer over a mixed key
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ epoch) ^ batch);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed,
                                                   std::uint64_t epoch) {
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(stream_seed(seed, epoch, 0xBA7C4ULL));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices,
                    const ChannelStats& stats, std::optional<std::uint64_t> augment_seed) {
  Batch<T> b;
  b.inputs = normalize<T>(ds, indices, stats);
  if (augment_seed) {
    std::mt19937_64 rng(*augment_seed);
    b.inputs = augment(b.inputs, rng);
  }
  b.labels.reserve(indices.size());
  for (std::size_t i : indices) b.labels.push_back(ds.labels[i]);
  return b;
}

#define MINITRAIN_INSTANTIATE_PREPROCESS(T)                                                  \
  template Tensor<T> normalize(const Dataset&, std::span<const std::size_t>,                 \
                               const ChannelStats&);                                         \
  template void apply_augment(std::span<T>, std::size_t, const AugmentDraw&);                \
  template void flip_horizontal(std::span<T>, std::size_t, std::size_t, std::size_t);        \
  template Tensor<T> augment(const Tensor<T>&, std::mt19937_64&, double);                    \
  template Batch<T> make_batch(const Dataset&, std::span<const std::size_t>,                 \
                               const ChannelStats&, std::optional<std::uint64_t>);

MINITRAIN_INSTANTIATE_PREPROCESS(float)
MINITRAIN_INSTANTIATE_PREPROCESS(double)

}  // namespace minitrain
