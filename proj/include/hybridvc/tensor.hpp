#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hybridvc/errors.hpp"

namespace hvc {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" +
           std::to_string(h) + "x" + std::to_string(w);
  }
};

// Dense N x C x H x W array, row-major. Conv weights reuse the same layout as
// (out_channels, in_channels, kernel, kernel).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw ValidationError("negative tensor dimension " + shape.str());
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T{0})
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w + x;
  }
  T& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& operator()(int n, int c, int y, int x) const {
    return data_[index(n, c, y, x)];
  }

  // One H x W channel plane of sample n.
  std::span<T> plane(int n, int c) {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }
  std::span<const T> plane(int n, int c) const {
    return {data_.data() + index(n, c, 0, 0),
            static_cast<std::size_t>(shape_.h) * shape_.w};
  }
  // All channels of sample n.
  std::span<T> sample(int n) {
    const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
    return {data_.data() + len * n, len};
  }
  std::span<const T> sample(int n) const {
    const std::size_t len = static_cast<std::size_t>(shape_.c) * shape_.h * shape_.w;
    return {data_.data() + len * n, len};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Reinterpret with a new shape of equal element count.
  void reshape(Shape s) {
    if (s.numel() != data_.size()) {
      throw ValidationError("reshape " + shape_.str() + " -> " + s.str());
    }
    shape_ = s;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

inline void require_same_shape(const Shape& a, const Shape& b,
                               const char* what) {
  if (!(a == b)) {
    throw ValidationError(std::string(what) + ": shape mismatch " + a.str() +
                          " vs " + b.str());
  }
}

}  // namespace hvc
