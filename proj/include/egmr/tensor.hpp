#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "egmr/errors.hpp"

namespace egmr {

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Allocator with a fixed 64-byte alignment. Vectorized reductions pick their
/// split between peeled and packed elements from the buffer address, so the
/// alignment has to be the same on every run for results to be bit-identical.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Storage = std::vector<T, AlignedAllocator<T>>;

/// Dense row-major tensor. Images and feature maps use C x H x W.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative tensor dimension in " + shape_str(shape_));
    }
    data_.assign(count(shape_), fill);
  }

  Tensor(std::vector<int> shape, Storage<T> data) : shape_(std::move(shape)), data_(std::move(data)) { check_count(); }
  Tensor(std::vector<int> shape, const std::vector<T>& data)
      : shape_(std::move(shape)), data_(data.begin(), data.end()) {
    check_count();
  }
  Tensor(std::vector<int> shape, std::initializer_list<T> data) : shape_(std::move(shape)), data_(data) { check_count(); }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage<T>& values() { return data_; }
  const Storage<T>& values() const { return data_; }
  /// Copy of the values in a plain vector.
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // C x H x W access.
  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_[1] + y) * shape_[2] + x];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Storage<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  T max_abs() const {
    T m = 0;
    for (T v : data_) m = std::max(m, std::abs(v));
    return m;
  }

 private:
  void check_count() const {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
    }
  }

  std::vector<int> shape_;
  Storage<T> data_;
};

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Copies channels [c0, c1) of a C x H x W tensor.
template <class T>
Tensor<T> channels(const Tensor<T>& x, int c0, int c1) {
  const int h = x.dim(1), w = x.dim(2);
  Tensor<T> out({c1 - c0, h, w});
  std::copy(x.data() + static_cast<std::size_t>(c0) * h * w, x.data() + static_cast<std::size_t>(c1) * h * w,
            out.data());
  return out;
}

template <class T>
Tensor<T> clamp01(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (auto& v : out.values()) v = std::clamp(v, T(0), T(1));
  return out;
}

}  // namespace egmr
