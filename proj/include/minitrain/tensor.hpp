#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "minitrain/error.hpp"

namespace minitrain {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
class Tape;

/// Dense row-major n-dimensional array with an optional gradient buffer.
///
/// Tensor is a handle: copies share storage, and `clone()` makes a detached
/// deep copy. Operations recorded on the active Tape capture handles, so
/// intermediate values stay alive until the tape is consumed.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(check_shape(shape), fill);
    impl_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    const std::size_t n = check_shape(shape);
    if (values.size() != n) {
      throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                       std::to_string(n) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl().shape.at(axis); }
  std::size_t numel() const { return impl().data.size(); }

  std::span<T> data() { return impl().data; }
  std::span<const T> data() const { return impl().data; }
  T* ptr() { return impl().data.data(); }
  const T* ptr() const { return impl().data.data(); }

  T item() const {
    if (numel() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl().data[0];
  }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool flag) { impl().requires_grad = flag; }

  bool has_grad() const { return !impl().grad.empty(); }
  std::span<T> grad() { return impl().grad; }
  std::span<const T> grad() const { return impl().grad; }

  /// Allocates a zero gradient buffer if none exists and returns it.
  /// Const because the buffer belongs to the shared storage, not the handle.
  std::span<T> ensure_grad() const {
    Impl& im = const_cast<Impl&>(impl());
    if (im.grad.empty()) im.grad.assign(numel(), T(0));
    return im.grad;
  }
  void zero_grad() {
    auto& g = impl().grad;
    std::fill(g.begin(), g.end(), T(0));
  }
  void drop_grad() { impl().grad = {}; }

  std::optional<std::size_t> tape_id() const { return impl().tape_id; }

  /// Deep copy of shape and values; no gradient, not attached to any tape.
  Tensor clone() const {
    Tensor out;
    out.impl_ = std::make_shared<Impl>();
    out.impl_->shape = impl().shape;
    out.impl_->data = impl().data;
    out.impl_->requires_grad = impl().requires_grad;
    return out;
  }

  /// Detached copy with a new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape<T>;

  struct Impl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::optional<std::size_t> tape_id;
    std::uint64_t tape_serial = 0;
  };

  static std::size_t check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_str(shape));
    }
    return shape_numel(shape);
  }

  Impl& impl() {
    if (!impl_) throw Error("use of an undefined tensor");
    return *impl_;
  }
  const Impl& impl() const {
    if (!impl_) throw Error("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (check_shape(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_str(this->shape()) + " to " +
                     shape_str(shape));
  }
  Tensor out = clone();
  out.impl_->shape = std::move(shape);
  return out;
}

}  // namespace minitrain
