#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace minitrain {

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageBytes = kImageChannels * kImageSide * kImageSide;  // 3072
inline constexpr std::size_t kRecordBytes = 1 + kImageBytes;                          // 3073
inline constexpr std::size_t kCifarClasses = 10;

enum class Split { kTrain, kTest };

/// Raw CIFAR-10 images kept as bytes in planar [M,3,32,32] order.
struct Dataset {
  std::vector<std::uint8_t> images;
  std::vector<int> labels;
  Split split = Split::kTrain;
  std::string source_digest;

  std::size_t size() const { return labels.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(images).subspan(i * kImageBytes, kImageBytes);
  }
  std::vector<std::size_t> class_counts() const;
};

/// Parses 3073-byte records (label byte, then R, G, B planes of 1024
/// row-major bytes each). source_digest is SHA-256 over the file contents
/// in the given order.
Dataset load_cifar_binary(const std::vector<std::filesystem::path>& paths,
                          Split split = Split::kTrain);

/// Writes the dataset back in the same record layout.
void write_cifar_binary(const Dataset& ds, const std::filesystem::path& path);

/// Locates data_batch_{1..5}.bin or test_batch.bin under `dir` (or its
/// cifar-10-batches-bin subdirectory) and loads them.
Dataset load_cifar_split(const std::filesystem::path& dir, Split split);

/// Copies the selected records, in the given order.
Dataset select_records(const Dataset& ds, std::span<const std::size_t> indices);

/// Class-balanced draw without replacement: exactly `per_class` records of
/// every class, output order shuffled. Deterministic in (ds, per_class, seed).
Dataset sample_subset(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

/// Index form of sample_subset.
std::vector<std::size_t> sample_subset_indices(const Dataset& ds, std::size_t per_class,
                                               std::uint64_t seed);

/// SHA-256 over labels and pixel bytes.
std::string dataset_digest(const Dataset& ds);

}  // namespace minitrain
