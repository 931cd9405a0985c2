#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "minitrain/cifar.hpp"
#include "minitrain/tensor.hpp"

namespace minitrain {

inline constexpr double kStdFloor = 1e-8;

/// Per-channel mean and standard deviation of pixel/255 over a dataset.
struct ChannelStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
};

ChannelStats compute_channel_stats(const Dataset& ds);

/// (x/255 − mean_c) / std_c for the selected records, as [N,3,32,32].
template <typename T>
Tensor<T> normalize(const Dataset& ds, std::span<const std::size_t> indices,
                    const ChannelStats& stats);

/// Crop offsets into the 4-pixel reflect-padded image, plus the flip bit.
struct AugmentDraw {
  std::size_t dy = 4;
  std::size_t dx = 4;
  bool flip = false;
};

inline constexpr std::size_t kAugmentPad = 4;

AugmentDraw draw_augment(std::mt19937_64& rng, double flip_probability = 0.5);

/// Applies reflect-pad-4, a 32×32 crop at (dy, dx), and an optional
/// horizontal flip to one [C,32,32] image in place.
template <typename T>
void apply_augment(std::span<T> image, std::size_t channels, const AugmentDraw& draw);

template <typename T>
void flip_horizontal(std::span<T> image, std::size_t channels, std::size_t height,
                     std::size_t width);

/// Augments every image of an [N,C,32,32] batch with draws from `rng`
/// (three draws per image, in image order). Returns a new tensor.
template <typename T>
Tensor<T> augment(const Tensor<T>& batch, std::mt19937_64& rng, double flip_probability = 0.5);

/// Seed of the random stream for (run seed, epoch, batch) triples.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t batch = 0);

/// Index batches for one epoch: ceil(M / batch_size) batches covering every
/// index once. Shuffled order depends only on (seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   bool shuffle, std::uint64_t seed,
                                                   std::uint64_t epoch = 0);

template <typename T>
struct Batch {
  Tensor<T> inputs;  // [N,3,32,32] normalized
  std::vector<int> labels;
};

/// Normalized (and, when `augment_seed` is set, augmented) batch.
template <typename T>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices,
                    const ChannelStats& stats, std::optional<std::uint64_t> augment_seed);

}  // namespace minitrain
