#pragma once

#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rspace/common.hpp"

namespace rspace::nn {

using Shape = std::vector<int>;

/// Storage for anything Eigen maps. Vectorized kernels peel differently
/// depending on the start address, so a fixed alignment keeps results
/// bit-identical from run to run.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

inline std::size_t shape_count(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= std::size_t(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor (last axis fastest).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)), data_(shape_count(shape_), fill) {
    check_shape();
  }
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end())) {}
  Tensor(Shape shape, Buffer<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_count(shape_))
      throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                       shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  Buffer<T>& vec() noexcept { return data_; }
  const Buffer<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  void reshape(Shape s) {
    if (shape_count(s) != data_.size())
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    shape_ = std::move(s);
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, Buffer<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  void check_shape() const {
    for (int d : shape_)
      if (d <= 0) throw ShapeError("tensor shape " + shape_str(shape_) + " has a non-positive extent");
  }

  Shape shape_;
  Buffer<T> data_;
};

}  // namespace rspace::nn
