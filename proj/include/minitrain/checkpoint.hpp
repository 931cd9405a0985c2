#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "minitrain/resnet9.hpp"

namespace minitrain {

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Flat record stream, see docs/checkpoint_format.md. Every integer and
// element is little-endian.
template <typename T>
void write_tensor_records(const std::filesystem::path& path, const NamedTensors<T>& records);

template <typename T>
NamedTensors<T> read_tensor_records(const std::filesystem::path& path);

/// Path of the JSON sidecar that accompanies a checkpoint file.
std::filesystem::path checkpoint_sidecar(const std::filesystem::path& path);

/// Writes `path` (records) and `path.json` (model spec and element size).
template <typename T>
void save_checkpoint(const ResNet9<T>& model, const std::filesystem::path& path);

template <typename T>
ResNet9<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace minitrain
