#pragma once

#include <string>
#include <vector>

#include "minitrain/tensor.hpp"

namespace minitrain {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool decay_exempt;
  bool gc_eligible;
};

/// Ordered, uniquely named trainable tensors.
///
/// Classification follows tensor rank: kernels and weight matrices (rank
/// >= 2) are gradient-centralization eligible; biases and batchnorm
/// scale/shift (rank 1) are exempt from weight decay.
template <typename T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> tensor) {
    for (const auto& e : entries_) {
      if (e.name == name) throw ConfigError("duplicate parameter name: " + name);
    }
    tensor.set_requires_grad(true);
    const bool multi_axis = tensor.rank() >= 2;
    entries_.push_back(ParamEntry<T>{std::move(name), std::move(tensor), !multi_axis, multi_axis});
  }

  std::size_t size() const { return entries_.size(); }
  ParamEntry<T>& operator[](std::size_t i) { return entries_[i]; }
  const ParamEntry<T>& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  const ParamEntry<T>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) {
      e.tensor.ensure_grad();
      e.tensor.zero_grad();
    }
  }

  /// Copies values (not gradients) from a shape-identical set.
  void assign_values(const ParamSet& other) {
    check_compatible(other);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto src = other.entries_[i].tensor.data();
      std::copy(src.begin(), src.end(), entries_[i].tensor.data().begin());
    }
  }

  void check_compatible(const ParamSet& other) const {
    if (other.size() != size()) {
      throw ShapeError("parameter sets differ in size: " + std::to_string(size()) + " vs " +
                       std::to_string(other.size()));
    }
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != other.entries_[i].name ||
          entries_[i].tensor.shape() != other.entries_[i].tensor.shape()) {
        throw ShapeError("parameter mismatch at " + entries_[i].name + " " +
                         shape_str(entries_[i].tensor.shape()) + " vs " + other.entries_[i].name +
                         " " + shape_str(other.entries_[i].tensor.shape()));
      }
    }
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

}  // namespace minitrain
