#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dhsl/errors.hpp"

namespace dhsl {

/// Dimensions of a rank-4 tensor: batch, rows, columns, channels.
struct Shape4 {
  std::size_t n = 1;
  std::size_t h = 1;
  std::size_t w = 1;
  std::size_t c = 1;

  std::size_t size() const noexcept { return n * h * w * c; }
  std::size_t sample_size() const noexcept { return h * w * c; }

  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const;
};

/// Dense rank-4 array stored row-major in (n, h, w, c) order, channels
/// fastest. Element (i, y, x, k) lives at ((i*h + y)*w + x)*c + k. The
/// checkpoint format stores tensors in exactly this order.
///
/// Convolution filters reuse the same container with dims
/// (kh, kw, c_in, c_out) mapped onto (n, h, w, c).
template <typename T>
class BasicTensor4 {
 public:
  using value_type = T;

  BasicTensor4() = default;

  explicit BasicTensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    check_dims(shape);
    data_.assign(shape.size(), fill);
  }

  BasicTensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_dims(shape);
    if (data_.size() != shape.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t i, std::size_t y, std::size_t x, std::size_t k) const noexcept {
    return ((i * shape_.h + y) * shape_.w + x) * shape_.c + k;
  }

  T& operator()(std::size_t i, std::size_t y, std::size_t x, std::size_t k) noexcept {
    return data_[index(i, y, x, k)];
  }
  const T& operator()(std::size_t i, std::size_t y, std::size_t x, std::size_t k) const noexcept {
    return data_[index(i, y, x, k)];
  }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  std::span<T> sample(std::size_t i) noexcept {
    return std::span<T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }
  std::span<const T> sample(std::size_t i) const noexcept {
    return std::span<const T>(data_).subspan(i * shape_.sample_size(), shape_.sample_size());
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor4<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor4&, const BasicTensor4&) = default;

 private:
  static void check_dims(const Shape4& s) {
    if (s.n == 0 || s.h == 0 || s.w == 0 || s.c == 0) {
      throw ShapeError("tensor dims must all be >= 1, got " + s.str());
    }
  }

  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor4 = BasicTensor4<float>;

/// Concatenates tensors along the batch axis. All other dims must agree.
template <typename T>
BasicTensor4<T> concat_batch(const BasicTensor4<T>& a, const BasicTensor4<T>& b);

/// Copies samples [begin, begin + count) into a new tensor.
template <typename T>
BasicTensor4<T> slice_batch(const BasicTensor4<T>& t, std::size_t begin, std::size_t count);

/// True when every element is finite.
template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace dhsl
