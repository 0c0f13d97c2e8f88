#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dhsl/tensor.hpp"

namespace dhsl::testing {

template <typename T>
BasicTensor4<T> random_tensor(Shape4 shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  BasicTensor4<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

/// Direct six-loop convolution over NHWC input and (kh, kw, cin, cout) filters.
inline BasicTensor4<double> conv_oracle(const BasicTensor4<double>& in, const BasicTensor4<double>& f,
                                        const std::vector<double>& bias, std::size_t stride, std::size_t pad) {
  const auto& s = in.shape();
  const auto& fs = f.shape();
  const std::size_t oh = (s.h + 2 * pad - fs.n) / stride + 1;
  const std::size_t ow = (s.w + 2 * pad - fs.h) / stride + 1;
  BasicTensor4<double> out(Shape4{s.n, oh, ow, fs.c});
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t co = 0; co < fs.c; ++co) {
          double acc = bias[co];
          for (std::size_t ky = 0; ky < fs.n; ++ky)
            for (std::size_t kx = 0; kx < fs.h; ++kx) {
              const long iy = static_cast<long>(y * stride + ky) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + kx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
              for (std::size_t ci = 0; ci < s.c; ++ci) {
                acc += in(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci) * f(ky, kx, ci, co);
              }
            }
          out(i, y, x, co) = acc;
        }
  return out;
}

/// Max pool where padded cells never win.
inline BasicTensor4<double> maxpool_oracle(const BasicTensor4<double>& in, std::size_t kh, std::size_t kw,
                                           std::size_t stride, std::size_t pad) {
  const auto& s = in.shape();
  const std::size_t oh = (s.h + 2 * pad - kh) / stride + 1;
  const std::size_t ow = (s.w + 2 * pad - kw) / stride + 1;
  BasicTensor4<double> out(Shape4{s.n, oh, ow, s.c});
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t k = 0; k < s.c; ++k) {
          double best = -INFINITY;
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) {
              const long iy = static_cast<long>(y * stride + dy) - static_cast<long>(pad);
              const long ix = static_cast<long>(x * stride + dx) - static_cast<long>(pad);
              if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
              best = std::max(best, in(i, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), k));
            }
          out(i, y, x, k) = best;
        }
  return out;
}

inline BasicTensor4<double> avgpool_oracle(const BasicTensor4<double>& in, std::size_t kh, std::size_t kw,
                                           std::size_t stride) {
  const auto& s = in.shape();
  const std::size_t oh = (s.h - kh) / stride + 1;
  const std::size_t ow = (s.w - kw) / stride + 1;
  BasicTensor4<double> out(Shape4{s.n, oh, ow, s.c});
  for (std::size_t i = 0; i < s.n; ++i)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        for (std::size_t k = 0; k < s.c; ++k) {
          double acc = 0.0;
          for (std::size_t dy = 0; dy < kh; ++dy)
            for (std::size_t dx = 0; dx < kw; ++dx) acc += in(i, y * stride + dy, x * stride + dx, k);
          out(i, y, x, k) = acc / static_cast<double>(kh * kw);
        }
  return out;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

/// |a - n| / max(|a|, |n|, floor): relative where gradients are sizable,
/// absolute against `floor` where both are tiny.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences of `loss` with respect to every entry of `values`,
/// compared against `analytic`. Returns the largest relative error.
inline double gradient_check(std::vector<double*> values, const std::vector<double>& analytic,
                             const std::function<double()>& loss, double h = 1e-5, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = *values[i];
    *values[i] = saved + h;
    const double up = loss();
    *values[i] = saved - h;
    const double down = loss();
    *values[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h), floor));
  }
  return worst;
}

/// Temporary directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "dhsl") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace dhsl::testing
