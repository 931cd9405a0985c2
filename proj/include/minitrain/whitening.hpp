#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "minitrain/cifar.hpp"
#include "minitrain/preprocess.hpp"

namespace minitrain {

inline constexpr std::size_t kPatchDim = 27;  // 3 channels × 3 × 3

/// PCA whitening of 3×3×3 patches as a frozen [27,3,3,3] convolution.
struct WhiteningFilters {
  std::vector<double> filters;  // row i: eigenvector i / sqrt(eigval i + eps), [c][ky][kx]
  std::vector<double> eigvals;  // descending, clamped at 0
  double eps = 1e-3;
  std::string fit_digest;
};

/// `count` patches drawn uniformly over (image, y, x) from normalized
/// [N,3,H,W] images. Returned row-major [count,27], each row flattened
/// in [c][ky][kx] order.
std::vector<double> sample_patches(std::span<const double> images, std::size_t n,
                                   std::size_t height, std::size_t width, std::size_t count,
                                   std::uint64_t seed);

/// Same sampler reading raw dataset bytes through `stats`.
std::vector<double> sample_patches(const Dataset& ds, const ChannelStats& stats,
                                   std::size_t count, std::uint64_t seed);

/// 27×27 covariance of mean-centered patch rows (divided by count).
std::vector<double> patch_covariance(std::span<const double> patches, std::size_t count);

WhiteningFilters fit_whitening_from_patches(std::span<const double> patches, std::size_t count,
                                            double eps);

/// Samples patches from the normalized training subset, then fits.
WhiteningFilters fit_whitening(const Dataset& ds, const ChannelStats& stats,
                               std::size_t sample_count, double eps, std::uint64_t seed);

}  // namespace minitrain
