#include <gtest/gtest.h>

#include "dhsl/kernels.hpp"
#include "dhsl/parallel.hpp"
#include "test_support.hpp"

using namespace dhsl;
using namespace dhsl::testing;

namespace {

struct ConvCase {
  Shape4 input;
  std::size_t k, c_out, stride, pad;
};

ConvCase random_conv_case(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(3, 9), c(1, 4), k(1, 3), stride(1, 2), pad(0, 1);
  ConvCase cc;
  cc.k = k(rng);
  cc.input = Shape4{n(rng), std::max(hw(rng), cc.k), std::max(hw(rng), cc.k), c(rng)};
  cc.c_out = c(rng);
  cc.stride = stride(rng);
  cc.pad = std::min(pad(rng), cc.k - 1);
  return cc;
}

}  // namespace

TEST(WindowExtent, MatchesFormula) {
  EXPECT_EQ(window_output_extent(128, 3, 1, 1), 128u);
  EXPECT_EQ(window_output_extent(128, 3, 2, 1), 64u);
  EXPECT_EQ(window_output_extent(6, 6, 1, 0), 1u);
  EXPECT_THROW(window_output_extent(2, 5, 1, 0), ShapeError);
}

TEST(Conv, MatchesLoopOracleOnRandomInstances) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 120; ++trial) {
    const ConvCase cc = random_conv_case(rng);
    const auto in = random_tensor<double>(cc.input, rng);
    const auto f = random_tensor<double>(Shape4{cc.k, cc.k, cc.input.c, cc.c_out}, rng);
    std::vector<double> bias(cc.c_out);
    for (auto& b : bias) b = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto got = conv2d_forward<double>(in, f, bias, cc.stride, cc.pad);
    const auto want = conv_oracle(in, f, bias, cc.stride, cc.pad);
    ASSERT_EQ(got.shape(), want.shape());
    ASSERT_LT(max_abs_diff(got.data(), want.data()), 1e-10) << "trial " << trial;
  }
}

TEST(Conv, BackwardMatchesAdjointOracle) {
  // <conv(x), g> is bilinear, so its gradient in x / f follows from the oracle
  // by probing unit directions.
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const ConvCase cc = random_conv_case(rng);
    const auto in = random_tensor<double>(cc.input, rng);
    const auto f = random_tensor<double>(Shape4{cc.k, cc.k, cc.input.c, cc.c_out}, rng);
    std::vector<double> bias(cc.c_out, 0.0);
    const auto out = conv_oracle(in, f, bias, cc.stride, cc.pad);
    const auto g = random_tensor<double>(out.shape(), rng);
    const auto grads = conv2d_backward<double>(in, f, g, cc.stride, cc.pad);
    auto inner = [&](const BasicTensor4<double>& x, const BasicTensor4<double>& w) {
      const auto o = conv_oracle(x, w, bias, cc.stride, cc.pad);
      double s = 0;
      for (std::size_t i = 0; i < o.size(); ++i) s += o[i] * g[i];
      return s;
    };
    for (std::size_t i = 0; i < in.size(); ++i) {
      BasicTensor4<double> e(in.shape());
      e[i] = 1.0;
      ASSERT_NEAR(grads.grad_input[i], inner(e, f), 1e-10);
    }
    for (std::size_t i = 0; i < f.size(); ++i) {
      BasicTensor4<double> e(f.shape());
      e[i] = 1.0;
      ASSERT_NEAR(grads.grad_filters[i], inner(in, e), 1e-10);
    }
    for (std::size_t co = 0; co < cc.c_out; ++co) {
      double s = 0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (i % cc.c_out == co) s += g[i];
      }
      ASSERT_NEAR(grads.grad_bias[co], s, 1e-10);
    }
  }
}

TEST(Conv, RejectsChannelMismatch) {
  BasicTensor4<double> in(Shape4{1, 4, 4, 2});
  BasicTensor4<double> f(Shape4{3, 3, 3, 1});
  std::vector<double> bias(1);
  EXPECT_THROW(conv2d_forward<double>(in, f, bias, 1, 1), ShapeError);
}

TEST(Conv, WorkerCountDoesNotChangeResults) {
  std::mt19937_64 rng(3);
  const auto in = random_tensor<float>(Shape4{6, 12, 8, 3}, rng);
  const auto f = random_tensor<float>(Shape4{3, 3, 3, 4}, rng);
  std::vector<float> bias(4, 0.5f);
  const auto g = random_tensor<float>(Shape4{6, 12, 8, 4}, rng);
  set_num_workers(1);
  const auto a = conv2d_backward<float>(in, f, g, 1, 1);
  set_num_workers(3);
  const auto b = conv2d_backward<float>(in, f, g, 1, 1);
  set_num_workers(1);
  EXPECT_EQ(a.grad_filters, b.grad_filters);
  EXPECT_EQ(a.grad_input, b.grad_input);
  EXPECT_EQ(a.grad_bias, b.grad_bias);
}

TEST(MaxPool, MatchesLoopOracleOnRandomInstances) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(3, 10), c(1, 4), k(2, 3), stride(1, 3), pad(0, 1);
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t kk = k(rng);
    const Shape4 shape{n(rng), hw(rng), hw(rng), c(rng)};
    const std::size_t st = stride(rng);
    const std::size_t pd = std::min(pad(rng), kk - 1);
    const auto in = random_tensor<double>(shape, rng);
    const auto got = maxpool_forward<double>(in, kk, kk, st, pd);
    const auto want = maxpool_oracle(in, kk, kk, st, pd);
    ASSERT_EQ(got.output.shape(), want.shape());
    ASSERT_LT(max_abs_diff(got.output.data(), want.data()), 1e-10) << "trial " << trial;
  }
}

TEST(MaxPool, TiesRouteGradientToFirstElement) {
  BasicTensor4<double> in(Shape4{1, 2, 2, 1}, 1.0);
  const auto r = maxpool_forward<double>(in, 2, 2, 2, 0);
  const auto g = maxpool_backward<double>(r.argmax, BasicTensor4<double>(Shape4{1, 1, 1, 1}, 1.0));
  EXPECT_EQ(g.vec(), (std::vector<double>{1, 0, 0, 0}));
}

TEST(MaxPool, NegativeInputsIgnorePadding) {
  BasicTensor4<double> in(Shape4{1, 2, 2, 1}, -5.0);
  const auto r = maxpool_forward<double>(in, 3, 3, 2, 1);
  for (double v : r.output.data()) EXPECT_EQ(v, -5.0);
}

TEST(MaxPool, RejectsPaddingAsLargeAsKernel) {
  BasicTensor4<double> in(Shape4{1, 4, 4, 1});
  EXPECT_THROW(maxpool_forward<double>(in, 2, 2, 1, 2), ShapeError);
}

TEST(AvgPool, MatchesLoopOracleOnRandomInstances) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(2, 9), c(1, 4), k(1, 3), stride(1, 2);
  for (int trial = 0; trial < 120; ++trial) {
    const Shape4 shape{n(rng), hw(rng), hw(rng), c(rng)};
    const std::size_t kh = std::min(k(rng), shape.h);
    const std::size_t kw = std::min(k(rng), shape.w);
    const std::size_t st = stride(rng);
    const auto in = random_tensor<double>(shape, rng);
    const auto got = avgpool_forward<double>(in, kh, kw, st);
    const auto want = avgpool_oracle(in, kh, kw, st);
    ASSERT_EQ(got.shape(), want.shape());
    ASSERT_LT(max_abs_diff(got.data(), want.data()), 1e-10) << "trial " << trial;
  }
}

TEST(Elementwise, BasicOps) {
  BasicTensor4<double> a(Shape4{1, 1, 2, 2}, std::vector<double>{1, -2, 3, -4});
  BasicTensor4<double> b(Shape4{1, 1, 2, 2}, std::vector<double>{2, 2, 2, 2});
  EXPECT_EQ(elementwise(ElementwiseOp::add, a, b).vec(), (std::vector<double>{3, 0, 5, -2}));
  EXPECT_EQ(elementwise(ElementwiseOp::sub, a, b).vec(), (std::vector<double>{-1, -4, 1, -6}));
  EXPECT_EQ(elementwise(ElementwiseOp::mul, a, b).vec(), (std::vector<double>{2, -4, 6, -8}));
  EXPECT_EQ(elementwise(ElementwiseOp::abs, a).vec(), (std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(elementwise(ElementwiseOp::relu, a).vec(), (std::vector<double>{1, 0, 3, 0}));
  EXPECT_EQ(elementwise(ElementwiseOp::scale, a, 0.5).vec(), (std::vector<double>{0.5, -1, 1.5, -2}));
  BasicTensor4<double> c(Shape4{1, 1, 1, 4});
  EXPECT_THROW(elementwise(ElementwiseOp::add, a, c), ShapeError);
}
