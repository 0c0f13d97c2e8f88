#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dhsl/errors.hpp"

namespace dhsl {

/// Row-major matrix holding one feature vector per row.
template <typename T>
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}
  FeatureMatrix(std::size_t r, std::size_t c, std::vector<T> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("feature matrix data does not match its dims");
  }

  std::span<T> row(std::size_t i) { return std::span<T>(data).subspan(i * cols, cols); }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(data).subspan(i * cols, cols);
  }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

}  // namespace dhsl
