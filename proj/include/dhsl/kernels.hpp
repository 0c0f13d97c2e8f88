#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dhsl/tensor.hpp"

namespace dhsl {

/// Output extent of a sliding window along one axis.
std::size_t window_output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad);

template <typename T>
struct ConvGradients {
  BasicTensor4<T> grad_input;
  BasicTensor4<T> grad_filters;
  std::vector<T> grad_bias;
};

/// 2-D convolution (cross-correlation) with zero padding. `filters` has
/// dims (kh, kw, c_in, c_out) and `bias` has c_out entries.
template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input, const BasicTensor4<T>& filters,
                               std::span<const T> bias, std::size_t stride, std::size_t pad);

template <typename T>
ConvGradients<T> conv2d_backward(const BasicTensor4<T>& input, const BasicTensor4<T>& filters,
                                 const BasicTensor4<T>& grad_out, std::size_t stride,
                                 std::size_t pad);

/// Flat input index of the winning element for every output cell.
struct ArgmaxMap {
  Shape4 input_shape;
  Shape4 output_shape;
  std::vector<std::size_t> index;
};

template <typename T>
struct MaxPoolResult {
  BasicTensor4<T> output;
  ArgmaxMap argmax;
};

/// Max pooling. Padded cells act as -inf and are never selected; ties go
/// to the first element in (row, column) scan order.
template <typename T>
MaxPoolResult<T> maxpool_forward(const BasicTensor4<T>& input, std::size_t kh, std::size_t kw,
                                 std::size_t stride, std::size_t pad);

template <typename T>
BasicTensor4<T> maxpool_backward(const ArgmaxMap& argmax, const BasicTensor4<T>& grad_out);

/// Unpadded average pooling; the window must fit inside the input.
template <typename T>
BasicTensor4<T> avgpool_forward(const BasicTensor4<T>& input, std::size_t kh, std::size_t kw,
                                std::size_t stride);

template <typename T>
BasicTensor4<T> avgpool_backward(const BasicTensor4<T>& grad_out, std::size_t kh, std::size_t kw,
                                 std::size_t stride, const Shape4& input_shape);

enum class ElementwiseOp { add, sub, mul, abs, relu, scale };

/// Binary element-wise op (add, sub, mul) on equally shaped tensors.
template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, const BasicTensor4<T>& b);

/// Tensor-scalar op: add, sub, mul and scale take the scalar as the second
/// operand; abs and relu ignore it.
template <typename T>
BasicTensor4<T> elementwise(ElementwiseOp op, const BasicTensor4<T>& a, T scalar = T(0));

}  // namespace dhsl
