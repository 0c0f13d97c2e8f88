#include "dhsl/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace dhsl {

std::string Shape4::str() const {
  return std::to_string(n) + "x" + std::to_string(h) + "x" + std::to_string(w) + "x" +
         std::to_string(c);
}

template <typename T>
BasicTensor4<T> concat_batch(const BasicTensor4<T>& a, const BasicTensor4<T>& b) {
  const Shape4 sa = a.shape();
  const Shape4 sb = b.shape();
  if (sa.h != sb.h || sa.w != sb.w || sa.c != sb.c) {
    throw ShapeError("cannot concatenate " + sa.str() + " with " + sb.str());
  }
  std::vector<T> data;
  data.reserve(a.size() + b.size());
  data.insert(data.end(), a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return BasicTensor4<T>(Shape4{sa.n + sb.n, sa.h, sa.w, sa.c}, std::move(data));
}

template <typename T>
BasicTensor4<T> slice_batch(const BasicTensor4<T>& t, std::size_t begin, std::size_t count) {
  const Shape4 s = t.shape();
  if (count == 0 || begin + count > s.n) {
    throw ShapeError("batch slice [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of range for " + s.str());
  }
  const auto first = t.data().begin() + static_cast<std::ptrdiff_t>(begin * s.sample_size());
  std::vector<T> data(first, first + static_cast<std::ptrdiff_t>(count * s.sample_size()));
  return BasicTensor4<T>(Shape4{count, s.h, s.w, s.c}, std::move(data));
}

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template BasicTensor4<float> concat_batch(const BasicTensor4<float>&, const BasicTensor4<float>&);
template BasicTensor4<double> concat_batch(const BasicTensor4<double>&,
                                           const BasicTensor4<double>&);
template BasicTensor4<float> slice_batch(const BasicTensor4<float>&, std::size_t, std::size_t);
template BasicTensor4<double> slice_batch(const BasicTensor4<double>&, std::size_t, std::size_t);
template bool all_finite(std::span<const float>);
template bool all_finite(std::span<const double>);

}  // namespace dhsl
