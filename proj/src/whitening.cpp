#include "minitrain/whitening.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

#include "minitrain/digest.hpp"

namespace minitrain {

namespace {

template <typename Read>
std::vector<double> draw_patches(std::size_t n, std::size_t height, std::size_t width,
                                 std::size_t count, std::uint64_t seed, Read read) {
  if (n == 0 || height < 3 || width < 3) {
    throw DataError("patch sampling needs at least one image of size >= 3x3");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_image(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_y(0, height - 3);
  std::uniform_int_distribution<std::size_t> pick_x(0, width - 3);
  std::vector<double> patches(count * kPatchDim);
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t i = pick_image(rng);
    const std::size_t y = pick_y(rng);
    const std::size_t x = pick_x(rng);
    double* row = patches.data() + s * kPatchDim;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) *row++ = read(i, c, y + ky, x + kx);
      }
    }
  }
  return patches;
}

}  // namespace

std::vector<double> sample_patches(std::span<const double> images, std::size_t n,
                                   std::size_t height, std::size_t width, std::size_t count,
                                   std::uint64_t seed) {
  if (images.size() != n * 3 * height * width) {
    throw ShapeError("sample_patches: buffer does not hold [" + std::to_string(n) + ",3," +
                     std::to_string(height) + "," + std::to_string(width) + "] values");
  }
  return draw_patches(n, height, width, count, seed,
                      [&](std::size_t i, std::size_t c, std::size_t y, std::size_t x) {
                        return images[((i * 3 + c) * height + y) * width + x];
                      });
}

std::vector<double> sample_patches(const Dataset& ds, const ChannelStats& stats,
                                   std::size_t count, std::uint64_t seed) {
  constexpr std::size_t side = kImageSide;
  return draw_patches(ds.size(), side, side, count, seed,
                      [&](std::size_t i, std::size_t c, std::size_t y, std::size_t x) {
                        const std::uint8_t v = ds.images[i * kImageBytes + (c * side + y) * side + x];
                        return (v / 255.0 - stats.mean[c]) / stats.std[c];
                      });
}

std::vector<double> patch_covariance(std::span<const double> patches, std::size_t count) {
  if (count == 0 || patches.size() != count * kPatchDim) {
    throw ShapeError("patch_covariance: expected " + std::to_string(count) + " rows of 27");
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> rows(patches.data(), static_cast<Eigen::Index>(count),
                             static_cast<Eigen::Index>(kPatchDim));
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  const Mat centered = rows.rowwise() - mean;
  const Mat cov = (centered.transpose() * centered) / static_cast<double>(count);
  return std::vector<double>(cov.data(), cov.data() + cov.size());
}

WhiteningFilters fit_whitening_from_patches(std::span<const double> patches, std::size_t count,
                                            double eps) {
  if (count < kPatchDim) {
    throw ConfigError("whitening needs at least 27 patches, got " + std::to_string(count));
  }
  if (!(eps >= 0.0)) throw ConfigError("whitening eps must be nonnegative");
  const auto cov_values = patch_covariance(patches, count);
  Eigen::Matrix<double, 27, 27, Eigen::RowMajor> cov;
  for (std::size_t i = 0; i < cov_values.size(); ++i) {
    if (!std::isfinite(cov_values[i])) throw NumericError("patch covariance is not finite");
    cov.data()[i] = cov_values[i];
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 27, 27>> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericError("patch covariance eigensolve failed");

  WhiteningFilters out;
  out.eps = eps;
  out.eigvals.resize(kPatchDim);
  out.filters.resize(kPatchDim * kPatchDim);
  for (std::size_t i = 0; i < kPatchDim; ++i) {
    // Eigen orders ascending; filters are emitted largest eigenvalue first.
    const auto src = static_cast<Eigen::Index>(kPatchDim - 1 - i);
    const double lambda = std::max(solver.eigenvalues()(src), 0.0);
    out.eigvals[i] = lambda;
    const double inv = 1.0 / std::sqrt(lambda + eps);
    if (!std::isfinite(inv)) {
      throw NumericError("whitening scale is not finite; use eps > 0 for degenerate patches");
    }
    for (std::size_t k = 0; k < kPatchDim; ++k) {
      out.filters[i * kPatchDim + k] = solver.eigenvectors()(static_cast<Eigen::Index>(k), src) * inv;
    }
  }
  Sha256 h;
  h.update_u64(count);
  h.update_values(patches);
  out.fit_digest = h.finish();
  return out;
}

WhiteningFilters fit_whitening(const Dataset& ds, const ChannelStats& stats,
                               std::size_t sample_count, double eps, std::uint64_t seed) {
  const auto patches = sample_patches(ds, stats, sample_count, seed);
  return fit_whitening_from_patches(patches, sample_count, eps);
}

}  // namespace minitrain
