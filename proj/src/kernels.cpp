#include "dhsl/kernels.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dhsl/parallel.hpp"

namespace dhsl {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvGeometry {
  std::size_t h, w, c_in;
  std::size_t kh, kw, c_out;
  std::size_t stride, pad;
  std::size_t oh, ow;

  std::size_t patch() const { return kh * kw * c_in; }
  std::size_t pixels() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Shape4& in, const Shape4& f, std::size_t stride, std::size_t pad) {
  if (f.w != in.c) {
    throw ShapeError("conv2d: filters " + f.str() + " expect " + std::to_string(f.w) +
                     " input channels but input is " + in.str());
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (f.n > in.h + 2 * pad || f.h > in.w + 2 * pad) {
    throw ShapeError("conv2d: filters " + f.str() + " larger than padded input " + in.str());
  }
  ConvGeometry g{in.h, in.w, in.c, f.n, f.h, f.c, stride, pad, 0, 0};
  g.oh = window_output_extent(in.h, f.n, stride, pad);
  g.ow = window_output_extent(in.w, f.h, stride, pad);
  return g;
}

// Unrolls one sample into a (oh*ow) x (kh*kw*c_in) patch matrix.
template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      T* row = col + (oy * g.ow + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                       static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                         static_cast<std::ptrdiff_t>(g.pad);
          T* dst = row + (ky * g.kw + kx) * g.c_in;
          if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(g.h) ||
              x >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(dst, dst + g.c_in, T(0));
          } else {
            const T* src = in + (static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(x)) * g.c_in;
            std::copy(src, src + g.c_in, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.oh; ++oy) {
    for (std::size_t ox = 0; ox < g.ow; ++ox) {
      const T* row = col + (oy * g.ow + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                       static_cast<std::ptrdiff_t>(g.pad);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                         static_cast<std::ptrdiff_t>(g.pad);
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* src = row + (ky * g.kw + kx) * g.c_in;
          T* dst = in + (static_cast<std::size_t>(y) * g.w + static_cast<std::size_t>(x)) * g.c_in;
          for (std::size_t k = 0; k < g.c_in; ++k) dst[k] += src[k];
        }
      }
    }
  }
}

void check_same_shape(const char* op, const Shape4& a, const Shape4& b) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

}  // namespace

std::size_t window_output_extent(std::size_t in, std::size_t k, std::size_t stride,
                                 std::size_t pad) {
  if (stride == 0) throw ShapeError("window stride must be >= 1");
  if (k == 0 || k > in + 2 * pad) {
    throw ShapeError("window of " + std::to_string(k) + " does not fit extent " +
                     std::to_string(in) + " with padding " + std::to_string(pad));
  }
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input, const BasicTensor4<T>& filters,
                               std::span<const T> bias, std::size_t stride, std::size_t pad) {
  const Shape4 in = input.shape();
  const ConvGeometry g = conv_geometry(in, filters.shape(), stride, pad);
  if (bias.size() != g.c_out) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) + " entries, filters " +
                     filters.shape().str() + " need " + std::to_string(g.c_out));
  }
  BasicTensor4<T> output(Shape4{in.n, g.oh, g.ow, g.c_out});
  const Eigen::Map<const RowMatrix<T>> f(filters.data().data(), static_cast<Eigen::Index>(g.patch()),
                                         static_cast<Eigen::Index>(g.c_out));
  parallel_for(in.n, [&](std::size_t i) {
    RowMatrix<T> col(static_cast<Eigen::Index>(g.pixels()), static_cast<Eigen::Index>(g.patch()));
    im2col(input.sample(i).data(), g, col.data());
    Eigen::Map<RowMatrix<T>> out(output.sample(i).data(), static_cast<Eigen::Index>(g.pixels()),
                                 static_cast<Eigen::Index>(g.c_out));
    out.noalias() = col * f;
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      T* row = out.data() + p * g.c_out;
      for (std::size_t k = 0; k < g.c_out; ++k) row[k] += bias[k];
    }
  });
  return output;
}

template <typename T>
ConvGradients<T> conv2d_backward(const BasicTensor4<T>& input, const BasicTensor4<T>& filters,
                                 const BasicTensor4<T>& grad_out, std::size_t stride,
                                 std::size_t pad) {
  const Shape4 in = input.shape();
  const ConvGeometry g = conv_geometry(in, filters.shape(), stride, pad);
  const Shape4 expected{in.n, g.oh, g.ow, g.c_out};
  if (!(grad_out.shape() == expected)) {
    throw ShapeError("conv2d backward: grad_out " + grad_out.shape().str() +
                     " does not match forward output " + expected.str());
  }
  ConvGradients<T> grads{BasicTensor4<T>(in), BasicTensor4<T>(filters.shape()),
                         std::vector<T>(g.c_out, T(0))};
  const auto patch = static_cast<Eigen::Index>(g.patch());
  const auto pixels = static_cast<Eigen::Index>(g.pixels());
  const auto c_out = static_cast<Eigen::Index>(g.c_out);
  const Eigen::Map<const RowMatrix<T>> f(filters.data().data(), patch, c_out);

  // Per-sample filter gradients are reduced in sample order afterwards so the
  // result does not depend on the worker count.
  std::vector<RowMatrix<T>> partial(in.n);
  parallel_for(in.n, [&](std::size_t i) {
    RowMatrix<T> col(pixels, patch);
    im2col(input.sample(i).data(), g, col.data());
    const Eigen::Map<const RowMatrix<T>> gout(grad_out.sample(i).data(), pixels, c_out);
    partial[i].noalias() = col.transpose() * gout;
    RowMatrix<T> gcol(pixels, patch);
    gcol.noalias() = gout * f.transpose();
    col2im_add(gcol.data(), g, grads.grad_input.sample(i).data());
  });

  Eigen::Map<RowMatrix<T>> gf(grads.grad_filters.data().data(), patch, c_out);
  for (std::size_t i = 0; i < in.n; ++i) {
    gf += partial[i];
    const T* go = grad_out.sample(i).data();
    for (std::size_t p = 0; p < g.pixels(); ++p) {
      for (std::size_t k = 0; k < g.c_out; ++k) grads.grad_bias[k] += go[p * g.c_out + k];
    }
  }
  return grads;
}

template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor4<T>& input, std::size_t kh, std::size_t kw,
                                 std::size_t stride, std::size_t pad) {
  const Shape4 in = input.shape();
  if (kh == 0 || kw == 0) throw ShapeError("maxpool: window must be at least 1x1");
  if (pad >= kh || pad >= kw) {
    throw ShapeError("maxpool: padding " + std::to_string(pad) + " must be smaller than window " +
                     std::to_string(kh) + "x" + std::to_string(kw));
  }
  if (kh > in.h + 2 * pad || kw > in.w + 2 * pad) {
    throw ShapeError("maxpool: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " larger than padded input " + in.str());
  }
  const std::size_t oh = window_output_extent(in.h, kh, stride, pad);
  const std::size_t ow = window_output_extent(in.w, kw, stride, pad);
  const Shape4 out_shape{in.n, oh, ow, in.c};

  MaxPoolResult<T> result{BasicTensor4<T>(out_shape),
                          ArgmaxMap{in, out_shape, std::vector<std::size_t>(out_shape.size())}};
  std::vector<T> best(in.c);
  for (std::size_t i = 0; i < in.n; ++i) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t out_base = result.output.index(i, oy, ox, 0);
        std::fill(best.begin(), best.end(), -std::numeric_limits<T>::infinity());
        std::size_t* arg = result.argmax.index.data() + out_base;
        std::fill(arg, arg + in.c, std::size_t(0));
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto y = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(in.h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto x = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(in.w)) continue;
            const std::size_t base =
                input.index(i, static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0);
            const T* src = input.data().data() + base;
            for (std::size_t k = 0; k < in.c; ++k) {
              if (src[k] > best[k]) {
                best[k] = src[k];
                arg[k] = base + k;
              }
            }
          }
        }
        std::copy(best.begin(), best.end(), result.output.data().data() + out_base);
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor4<T> maxpool_backward(const ArgmaxMap& argmax, const BasicTensor4<T>& grad_out) {
  check_same_shape("maxpool backward", argmax.output_shape, grad_out.shape());
  BasicTensor4<T> grad_input(argmax.input_shape);
  for (std::size_t j = 0; j < grad_out.size(); ++j) grad_input[argmax.index[j]] += grad_out[j];
  return grad_input;
}

template <typename T>
BasicTensor4<T> avgpool_forward(const BasicTensor4<T>& input, std::size_t kh, std::size_t kw,
                                std::size_t stride) {
  const Shape4 in = input.shape();
  if (kh == 0 || kw == 0 || kh > in.h || kw > in.w) {
    throw ShapeError("avgpool: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + in.str());
  }
  const std::size_t oh = window_output_extent(in.h, kh, stride, 0);
  const std::size_t ow = window_output_extent(in.w, kw, stride, 0);
  BasicTensor4<T> output(Shape4{in.n, oh, ow, in.c});
  const T norm = T(1) / static_cast<T>(kh * kw);
  for (std::size_t i = 0; i < in.n; ++i) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        T* dst = output.data().data() + output.index(i, oy, ox, 0);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T* src = input.data().data() + input.index(i, oy * stride + ky, ox * stride + kx, 0);
            for (std::size_t k = 0; k < in.c; ++k) dst[k] += src[k];
          }
        }
        for (std::size_t k = 0; k < in.c; ++k) dst[k] *= norm;
      }
    }
  }
  return output;
}

template <typename T>
BasicTensor4<T> avgpool_backward(const BasicTensor4<T>& grad_out, std::size_t kh, std::size_t kw,
                                 std::size_t stride, const Shape4& input_shape) {
  if (kh == 0 || kw == 0 || kh > input_shape.h || kw > input_shape.w) {
    throw ShapeError("avgpool backward: window does not fit input " + input_shape.str());
  }
  const Shape4 expected{input_shape.n, window_output_extent(input_shape.h, kh, stride, 0),
                        window_output_extent(input_shape.w, kw, stride, 0), input_shape.c};
  check_same_shape("avgpool backward", expected, grad_out.shape());
  BasicTensor4<T> grad_input(input_shape);
  const T norm = T(1) / static_cast<T>(kh * kw);
  for (std::size_t i = 0; i < expected.n; ++i) {
    for (std::size_t oy = 0; oy < expected.h; ++oy) {
      for (std::size_t ox = 0; ox < expected.w; ++ox) {
        const T* src = grad_out.data().data() + grad_out.index(i, oy, ox, 0);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            T* dst = grad_input.data().data() +
                     grad_input.index(i, oy * stride + ky, ox * stride + kx, 0);
            for (std::size_t k = 0; k < input_shape.c; ++k) dst[k] += src[k] * norm;
          }
        }
      }
    }
  }
  return grad_input;
}

template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, const BasicTensor4<T>& b) {
  check_same_shape("elementwise", a.shape(), b.shape());
  BasicTensor4<T> out(a.shape());
  for (std::size_t j = 0; j < a.size(); ++j) {
    switch (op) {
      case ElementwiseOp::add: out[j] = a[j] + b[j]; break;
      case ElementwiseOp::sub: out[j] = a[j] - b[j]; break;
      case ElementwiseOp::mul: out[j] = a[j] * b[j]; break;
      default: throw ArgumentError("elementwise: op is not a binary tensor op");
    }
  }
  return out;
}

template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, T scalar) {
  BasicTensor4<T> out(a.shape());
  for (std::size_t j = 0; j < a.size(); ++j) {
    switch (op) {
      case ElementwiseOp::add: out[j] = a[j] + scalar; break;
      case ElementwiseOp::sub: out[j] = a[j] - scalar; break;
      case ElementwiseOp::mul:
      case ElementwiseOp::scale: out[j] = a[j] * scalar; break;
      case ElementwiseOp::abs: out[j] = std::abs(a[j]); break;
      case ElementwiseOp::relu: out[j] = a[j] > T(0) ? a[j] : T(0); break;
    }
  }
  return out;
}

#define DHSL_INSTANTIATE_KERNELS(T)                                                              \
  template BasicTensor4<T> conv2d_forward(const BasicTensor4<T>&, const BasicTensor4<T>&,        \
                                          std::span<const T>, std::size_t, std::size_t);        \
  template ConvGradients<T> conv2d_backward(const BasicTensor4<T>&, const BasicTensor4<T>&,      \
                                            const BasicTensor4<T>&, std::size_t, std::size_t);  \
  template MaxPoolResult<T> maxpool_forward(const BasicTensor4<T>&, std::size_t, std::size_t,    \
                                            std::size_t, std::size_t);                           \
  template BasicTensor4<T> maxpool_backward(const ArgmaxMap&, const BasicTensor4<T>&);           \
  template BasicTensor4<T> avgpool_forward(const BasicTensor4<T>&, std::size_t, std::size_t,     \
                                           std::size_t);                                         \
  template BasicTensor4<T> avgpool_backward(const BasicTensor4<T>&, std::size_t, std::size_t,    \
                                            std::size_t, const Shape4&);                         \
  template BasicTensor4<T> elementwise(ElementwiseOp, const BasicTensor4<T>&,                    \
                                       const BasicTensor4<T>&);                                  \
  template BasicTensor4<T> elementwise(ElementwiseOp, const BasicTensor4<T>&, T);

DHSL_INSTANTIATE_KERNELS(float)
DHSL_INSTANTIATE_KERNELS(double)

#undef DHSL_INSTANTIATE_KERNELS

}  // namespace dhsl
