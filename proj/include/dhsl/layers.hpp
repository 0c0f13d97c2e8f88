#pragma once

#include <array>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dhsl/kernels.hpp"
#include "dhsl/tensor.hpp"

namespace dhsl {

enum class Mode { train, infer };

/// A named view onto one parameter (or state) array and its gradient.
/// `grad` is empty for non-learnable state such as running statistics.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<std::size_t> dims;
  std::span<T> value;
  std::span<T> grad;
};

template <typename T>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const noexcept { return name_; }

  virtual std::unique_ptr<Layer> clone() const = 0;
  virtual Shape4 output_shape(const Shape4& input) const = 0;

  /// `groups` splits the batch into equal contiguous blocks whose partial
  /// statistics are reduced block by block (only batch norm uses it).
  virtual BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode,
                                  std::size_t groups = 1) = 0;

  /// Returns d(loss)/d(input) and accumulates parameter gradients.
  virtual BasicTensor4<T> backward(const BasicTensor4<T>& grad_out) = 0;

  /// Learnable parameters with their gradient buffers.
  virtual std::vector<ParamRef<T>> params() { return {}; }
  /// Learnable parameters followed by persistent non-learnable state.
  virtual std::vector<ParamRef<T>> state() { return params(); }

  void zero_grad() {
    for (auto& p : params()) std::fill(p.grad.begin(), p.grad.end(), T(0));
  }

 protected:
  Layer(const Layer&) = default;
  Layer& operator=(const Layer&) = default;

  void require_cached(bool cached) const {
    if (!cached) throw StateError(name_ + ": backward called without a cached forward pass");
  }

 private:
  std::string name_;
};

template <typename T>
class ConvLayer final : public Layer<T> {
 public:
  ConvLayer(std::string name, std::size_t kernel, std::size_t c_in, std::size_t c_out,
            std::size_t stride = 1, std::size_t pad = 1);

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvLayer>(*this); }
  Shape4 output_shape(const Shape4& input) const override;
  BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode, std::size_t groups = 1) override;
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out) override;
  std::vector<ParamRef<T>> params() override;

  BasicTensor4<T>& filters() noexcept { return filters_; }
  const BasicTensor4<T>& filters() const noexcept { return filters_; }
  std::vector<T>& bias() noexcept { return bias_; }
  const std::vector<T>& bias() const noexcept { return bias_; }
  std::size_t stride() const noexcept { return stride_; }
  std::size_t pad() const noexcept { return pad_; }

 private:
  BasicTensor4<T> filters_;
  std::vector<T> bias_;
  BasicTensor4<T> grad_filters_;
  std::vector<T> grad_bias_;
  std::size_t stride_;
  std::size_t pad_;
  std::optional<BasicTensor4<T>> cached_input_;
};

/// Batch normalization with learnable per-channel scale and shift, optionally
/// followed by a fused ReLU.
template <typename T>
class BatchNormLayer final : public Layer<T> {
 public:
  BatchNormLayer(std::string name, std::size_t channels, bool relu = true, double epsilon = 1e-5,
                 double momentum = 0.1);

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<BatchNormLayer>(*this);
  }
  Shape4 output_shape(const Shape4& input) const override;
  BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode, std::size_t groups = 1) override;
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out) override;
  std::vector<ParamRef<T>> params() override;
  std::vector<ParamRef<T>> state() override;

  std::vector<T>& gamma() noexcept { return gamma_; }
  std::vector<T>& beta() noexcept { return beta_; }
  std::vector<T>& running_mean() noexcept { return running_mean_; }
  std::vector<T>& running_var() noexcept { return running_var_; }
  const std::vector<T>& running_mean() const noexcept { return running_mean_; }
  const std::vector<T>& running_var() const noexcept { return running_var_; }
  double epsilon() const noexcept { return epsilon_; }
  bool fused_relu() const noexcept { return relu_; }

  /// Pre-affine normalized activations of the last forward pass.
  const BasicTensor4<T>& normalized() const;

 private:
  std::size_t channels_;
  bool relu_;
  double epsilon_;
  double momentum_;
  std::vector<T> gamma_, beta_;
  std::vector<T> grad_gamma_, grad_beta_;
  std::vector<T> running_mean_, running_var_;

  struct Cache {
    Mode mode;
    std::size_t groups;
    BasicTensor4<T> normalized;
    BasicTensor4<T> output;
    std::vector<T> inv_std;
  };
  std::optional<Cache> cache_;
};

template <typename T>
class MaxPoolLayer final : public Layer<T> {
 public:
  MaxPoolLayer(std::string name, std::size_t kernel, std::size_t stride, std::size_t pad);

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPoolLayer>(*this); }
  Shape4 output_shape(const Shape4& input) const override;
  BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode, std::size_t groups = 1) override;
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out) override;

 private:
  std::size_t kernel_, stride_, pad_;
  std::optional<ArgmaxMap> argmax_;
};

template <typename T>
class AvgPoolLayer final : public Layer<T> {
 public:
  AvgPoolLayer(std::string name, std::size_t kh, std::size_t kw, std::size_t stride);

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<AvgPoolLayer>(*this); }
  Shape4 output_shape(const Shape4& input) const override;
  BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode, std::size_t groups = 1) override;
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out) override;

 private:
  std::size_t kh_, kw_, stride_;
  std::optional<Shape4> input_shape_;
};

/// Geometry of one feature-extraction branch: three conv / batch-norm+ReLU /
/// max-pool blocks followed by a horizontal average pool.
struct StackConfig {
  std::size_t input_h = 128;
  std::size_t input_w = 48;
  std::size_t input_c = 3;
  std::array<std::size_t, 3> widths{32, 64, 128};
  std::size_t conv_kernel = 3;
  std::size_t pool_kernel = 3;
  std::size_t pool_stride = 2;
  std::size_t pool_pad = 1;
  /// Width of the final average-pool window; 0 averages the full remaining width.
  std::size_t avg_window_w = 0;

  /// Default geometry with channel widths scaled by `multiplier` (2 doubles them).
  static StackConfig with_channel_multiplier(double multiplier);

  /// Spatial extent after the three max-pool layers.
  std::pair<std::size_t, std::size_t> pooled_extent() const;
  std::size_t avg_window() const;
  std::size_t feature_dim() const;

  friend bool operator==(const StackConfig&, const StackConfig&) = default;
};

struct LayerParamCount {
  std::string layer;
  std::size_t weights = 0;
  std::size_t biases = 0;
};

/// C1 -> B1 -> M1 -> C2 -> B2 -> M2 -> C3 -> B3 -> M3 -> A1.
template <typename T>
class LayerStack {
 public:
  explicit LayerStack(const StackConfig& config = {});
  LayerStack(const LayerStack& other);
  LayerStack& operator=(const LayerStack& other);
  LayerStack(LayerStack&&) noexcept = default;
  LayerStack& operator=(LayerStack&&) noexcept = default;

  const StackConfig& config() const noexcept { return config_; }
  std::size_t feature_dim() const { return config_.feature_dim(); }
  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
  const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
  Layer<T>& layer(const std::string& name);

  /// Output shape of every layer for a batch of `n` inputs.
  std::vector<std::pair<std::string, Shape4>> planned_shapes(std::size_t n) const;
  /// Output shape of every layer seen during the last forward pass.
  const std::vector<std::pair<std::string, Shape4>>& last_shapes() const noexcept {
    return last_shapes_;
  }

  BasicTensor4<T> forward(const BasicTensor4<T>& input, Mode mode, std::size_t groups = 1);
  BasicTensor4<T> backward(const BasicTensor4<T>& grad_out);

  std::vector<ParamRef<T>> params();
  std::vector<ParamRef<T>> state();
  void zero_grad();

  std::vector<LayerParamCount> count_params() const;

 private:
  StackConfig config_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::pair<std::string, Shape4>> last_shapes_;
};

}  // namespace dhsl
