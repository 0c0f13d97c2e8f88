#include "dhsl/layers.hpp"

#include <cmath>

namespace dhsl {

namespace {

template <typename T>
std::span<T> as_span(std::vector<T>& v) {
  return std::span<T>(v);
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvLayer

template <typename T>
ConvLayer<T>::ConvLayer(std::string name, std::size_t kernel, std::size_t c_in, std::size_t c_out,
                        std::size_t stride, std::size_t pad)
    : Layer<T>(std::move(name)),
      filters_(Shape4{kernel, kernel, c_in, c_out}),
      bias_(c_out, T(0)),
      grad_filters_(Shape4{kernel, kernel, c_in, c_out}),
      grad_bias_(c_out, T(0)),
      stride_(stride),
      pad_(pad) {}

template <typename T>
Shape4 ConvLayer<T>::output_shape(const Shape4& input) const {
  const Shape4 f = filters_.shape();
  if (input.c != f.w) {
    throw ShapeError(this->name() + ": expected " + std::to_string(f.w) + " input channels, got " +
                     input.str());
  }
  return Shape4{input.n, window_output_extent(input.h, f.n, stride_, pad_),
                window_output_extent(input.w, f.h, stride_, pad_), f.c};
}

template <typename T>
BasicTensor4<T> ConvLayer<T>::forward(const BasicTensor4<T>& input, Mode, std::size_t) {
  output_shape(input.shape());
  auto out = conv2d_forward<T>(input, filters_, bias_, stride_, pad_);
  cached_input_ = input;
  return out;
}

template <typename T>
BasicTensor4<T> ConvLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  this->require_cached(cached_input_.has_value());
  auto grads = conv2d_backward<T>(*cached_input_, filters_, grad_out, stride_, pad_);
  for (std::size_t j = 0; j < grad_filters_.size(); ++j) grad_filters_[j] += grads.grad_filters[j];
  for (std::size_t k = 0; k < grad_bias_.size(); ++k) grad_bias_[k] += grads.grad_bias[k];
  return std::move(grads.grad_input);
}

template <typename T>
std::vector<ParamRef<T>> ConvLayer<T>::params() {
  const Shape4 f = filters_.shape();
  return {
      {this->name() + ".filters", {f.n, f.h, f.w, f.c}, filters_.data(), grad_filters_.data()},
      {this->name() + ".bias", {bias_.size()}, as_span(bias_), as_span(grad_bias_)},
  };
}

// ---------------------------------------------------------------------------
// BatchNormLayer

template <typename T>
BatchNormLayer<T>::BatchNormLayer(std::string name, std::size_t channels, bool relu,
                                  double epsilon, double momentum)
    : Layer<T>(std::move(name)),
      channels_(channels),
      relu_(relu),
      epsilon_(epsilon),
      momentum_(momentum),
      gamma_(channels, T(1)),
      beta_(channels, T(0)),
      grad_gamma_(channels, T(0)),
      grad_beta_(channels, T(0)),
      running_mean_(channels, T(0)),
      running_var_(channels, T(1)) {}

template <typename T>
Shape4 BatchNormLayer<T>::output_shape(const Shape4& input) const {
  if (input.c != channels_) {
    throw ShapeError(this->name() + ": expected " + std::to_string(channels_) +
                     " channels, got " + input.str());
  }
  return input;
}

template <typename T>
BasicTensor4<T> BatchNormLayer<T>::forward(const BasicTensor4<T>& input, Mode mode,
                                           std::size_t groups) {
  const Shape4 s = output_shape(input.shape());
  if (groups == 0 || s.n % groups != 0) {
    throw ShapeError(this->name() + ": batch of " + std::to_string(s.n) +
                     " cannot be split into " + std::to_string(groups) + " groups");
  }
  const std::size_t c = channels_;
  const std::size_t pixels = s.n * s.h * s.w;
  const std::size_t group_pixels = pixels / groups;
  const T* x = input.data().data();

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == Mode::train) {
    // Each group is reduced on its own and the group totals are added in
    // order, so swapping two equal-sized groups gives bit-identical stats.
    std::vector<double> partial(c);
    for (std::size_t g = 0; g < groups; ++g) {
      std::fill(partial.begin(), partial.end(), 0.0);
      for (std::size_t p = g * group_pixels; p < (g + 1) * group_pixels; ++p) {
        for (std::size_t k = 0; k < c; ++k) partial[k] += x[p * c + k];
      }
      for (std::size_t k = 0; k < c; ++k) mean[k] += partial[k];
    }
    for (std::size_t k = 0; k < c; ++k) mean[k] /= static_cast<double>(pixels);
    for (std::size_t g = 0; g < groups; ++g) {
      std::fill(partial.begin(), partial.end(), 0.0);
      for (std::size_t p = g * group_pixels; p < (g + 1) * group_pixels; ++p) {
        for (std::size_t k = 0; k < c; ++k) {
          const double d = x[p * c + k] - mean[k];
          partial[k] += d * d;
        }
      }
      for (std::size_t k = 0; k < c; ++k) var[k] += partial[k];
    }
    for (std::size_t k = 0; k < c; ++k) var[k] /= static_cast<double>(pixels);

    const double unbias = pixels > 1 ? static_cast<double>(pixels) / (pixels - 1) : 1.0;
    for (std::size_t k = 0; k < c; ++k) {
      running_mean_[k] = static_cast<T>((1.0 - momentum_) * running_mean_[k] + momentum_ * mean[k]);
      running_var_[k] =
          static_cast<T>((1.0 - momentum_) * running_var_[k] + momentum_ * var[k] * unbias);
    }
  } else {
    for (std::size_t k = 0; k < c; ++k) {
      mean[k] = running_mean_[k];
      var[k] = running_var_[k];
    }
  }

  Cache cache{mode, groups, BasicTensor4<T>(s), BasicTensor4<T>(s), std::vector<T>(c)};
  std::vector<T> mean_t(c);
  for (std::size_t k = 0; k < c; ++k) {
    cache.inv_std[k] = static_cast<T>(1.0 / std::sqrt(var[k] + epsilon_));
    mean_t[k] = static_cast<T>(mean[k]);
  }
  T* xhat = cache.normalized.data().data();
  T* y = cache.output.data().data();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t k = 0; k < c; ++k) {
      const std::size_t j = p * c + k;
      xhat[j] = (x[j] - mean_t[k]) * cache.inv_std[k];
      const T v = gamma_[k] * xhat[j] + beta_[k];
      y[j] = (relu_ && !(v > T(0))) ? T(0) : v;
    }
  }
  BasicTensor4<T> out = cache.output;
  cache_ = std::move(cache);
  return out;
}

template <typename T>
BasicTensor4<T> BatchNormLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  this->require_cached(cache_.has_value());
  const Cache& cache = *cache_;
  const Shape4 s = cache.output.shape();
  if (!(grad_out.shape() == s)) {
    throw ShapeError(this->name() + ": grad_out " + grad_out.shape().str() +
                     " does not match output " + s.str());
  }
  const std::size_t c = channels_;
  const std::size_t pixels = s.n * s.h * s.w;
  const std::size_t group_pixels = pixels / cache.groups;
  const T* xhat = cache.normalized.data().data();
  const T* y = cache.output.data().data();

  std::vector<T> dy(grad_out.data().begin(), grad_out.data().end());
  if (relu_) {
    for (std::size_t j = 0; j < dy.size(); ++j) {
      if (!(y[j] > T(0))) dy[j] = T(0);
    }
  }

  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0), partial_dy(c), partial_dyx(c);
  for (std::size_t g = 0; g < cache.groups; ++g) {
    std::fill(partial_dy.begin(), partial_dy.end(), 0.0);
    std::fill(partial_dyx.begin(), partial_dyx.end(), 0.0);
    for (std::size_t p = g * group_pixels; p < (g + 1) * group_pixels; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        partial_dy[k] += dy[p * c + k];
        partial_dyx[k] += static_cast<double>(dy[p * c + k]) * xhat[p * c + k];
      }
    }
    for (std::size_t k = 0; k < c; ++k) {
      sum_dy[k] += partial_dy[k];
      sum_dy_xhat[k] += partial_dyx[k];
    }
  }
  for (std::size_t k = 0; k < c; ++k) {
    grad_gamma_[k] += static_cast<T>(sum_dy_xhat[k]);
    grad_beta_[k] += static_cast<T>(sum_dy[k]);
  }

  BasicTensor4<T> grad_in(s);
  T* dx = grad_in.data().data();
  if (cache.mode == Mode::train) {
    const double m = static_cast<double>(pixels);
    std::vector<T> scale(c), mean_dy(c), mean_dyx(c);
    for (std::size_t k = 0; k < c; ++k) {
      scale[k] = gamma_[k] * cache.inv_std[k];
      mean_dy[k] = static_cast<T>(sum_dy[k] / m);
      mean_dyx[k] = static_cast<T>(sum_dy_xhat[k] / m);
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t j = p * c + k;
        dx[j] = scale[k] * (dy[j] - mean_dy[k] - xhat[j] * mean_dyx[k]);
      }
    }
  } else {
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t j = p * c + k;
        dx[j] = dy[j] * gamma_[k] * cache.inv_std[k];
      }
    }
  }
  return grad_in;
}

template <typename T>
std::vector<ParamRef<T>> BatchNormLayer<T>::params() {
  return {
      {this->name() + ".gamma", {channels_}, as_span(gamma_), as_span(grad_gamma_)},
      {this->name() + ".beta", {channels_}, as_span(beta_), as_span(grad_beta_)},
  };
}

template <typename T>
std::vector<ParamRef<T>> BatchNormLayer<T>::state() {
  auto refs = params();
  refs.push_back({this->name() + ".running_mean", {channels_}, as_span(running_mean_), {}});
  refs.push_back({this->name() + ".running_var", {channels_}, as_span(running_var_), {}});
  return refs;
}

template <typename T>
const BasicTensor4<T>& BatchNormLayer<T>::normalized() const {
  this->require_cached(cache_.has_value());
  return cache_->normalized;
}

// ---------------------------------------------------------------------------
// Pooling layers

template <typename T>
MaxPoolLayer<T>::MaxPoolLayer(std::string name, std::size_t kernel, std::size_t stride,
                              std::size_t pad)
    : Layer<T>(std::move(name)), kernel_(kernel), stride_(stride), pad_(pad) {}

template <typename T>
Shape4 MaxPoolLayer<T>::output_shape(const Shape4& input) const {
  return Shape4{input.n, window_output_extent(input.h, kernel_, stride_, pad_),
                window_output_extent(input.w, kernel_, stride_, pad_), input.c};
}

template <typename T>
BasicTensor4<T> MaxPoolLayer<T>::forward(const BasicTensor4<T>& input, Mode, std::size_t) {
  try {
    auto result = maxpool_forward<T>(input, kernel_, kernel_, stride_, pad_);
    argmax_ = std::move(result.argmax);
    return std::move(result.output);
  } catch (const ShapeError& e) {
    throw ShapeError(this->name() + ": " + e.what());
  }
}

template <typename T>
BasicTensor4<T> MaxPoolLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  this->require_cached(argmax_.has_value());
  return maxpool_backward<T>(*argmax_, grad_out);
}

template <typename T>
AvgPoolLayer<T>::AvgPoolLayer(std::string name, std::size_t kh, std::size_t kw, std::size_t stride)
    : Layer<T>(std::move(name)), kh_(kh), kw_(kw), stride_(stride) {}

template <typename T>
Shape4 AvgPoolLayer<T>::output_shape(const Shape4& input) const {
  if (kh_ > input.h || kw_ > input.w) {
    throw ShapeError(this->name() + ": window " + std::to_string(kh_) + "x" + std::to_string(kw_) +
                     " does not fit " + input.str());
  }
  return Shape4{input.n, window_output_extent(input.h, kh_, stride_, 0),
                window_output_extent(input.w, kw_, stride_, 0), input.c};
}

template <typename T>
BasicTensor4<T> AvgPoolLayer<T>::forward(const BasicTensor4<T>& input, Mode, std::size_t) {
  output_shape(input.shape());
  input_shape_ = input.shape();
  return avgpool_forward<T>(input, kh_, kw_, stride_);
}

template <typename T>
BasicTensor4<T> AvgPoolLayer<T>::backward(const BasicTensor4<T>& grad_out) {
  this->require_cached(input_shape_.has_value());
  return avgpool_backward<T>(grad_out, kh_, kw_, stride_, *input_shape_);
}

// ---------------------------------------------------------------------------
// StackConfig

StackConfig StackConfig::with_channel_multiplier(double multiplier) {
  if (!(multiplier > 0.0)) throw ConfigError("channel multiplier must be positive");
  StackConfig config;
  for (auto& w : config.widths) {
    w = static_cast<std::size_t>(std::lround(static_cast<double>(w) * multiplier));
    if (w == 0) throw ConfigError("channel multiplier too small");
  }
  return config;
}

std::pair<std::size_t, std::size_t> StackConfig::pooled_extent() const {
  std::size_t h = input_h, w = input_w;
  for (int block = 0; block < 3; ++block) {
    h = window_output_extent(h, conv_kernel, 1, conv_kernel / 2);
    w = window_output_extent(w, conv_kernel, 1, conv_kernel / 2);
    h = window_output_extent(h, pool_kernel, pool_stride, pool_pad);
    w = window_output_extent(w, pool_kernel, pool_stride, pool_pad);
  }
  return {h, w};
}

std::size_t StackConfig::avg_window() const {
  return avg_window_w == 0 ? pooled_extent().second : avg_window_w;
}

std::size_t StackConfig::feature_dim() const {
  const auto [h, w] = pooled_extent();
  return h * window_output_extent(w, avg_window(), 1, 0) * widths[2];
}

// ---------------------------------------------------------------------------
// LayerStack

template <typename T>
LayerStack<T>::LayerStack(const StackConfig& config) : config_(config) {
  std::size_t c_in = config.input_c;
  for (int block = 0; block < 3; ++block) {
    const std::string idx = std::to_string(block + 1);
    const std::size_t width = config.widths[static_cast<std::size_t>(block)];
    layers_.push_back(std::make_unique<ConvLayer<T>>("C" + idx, config.conv_kernel, c_in, width, 1,
                                                     config.conv_kernel / 2));
    layers_.push_back(std::make_unique<BatchNormLayer<T>>("B" + idx, width, true));
    layers_.push_back(std::make_unique<MaxPoolLayer<T>>("M" + idx, config.pool_kernel,
                                                        config.pool_stride, config.pool_pad));
    c_in = width;
  }
  layers_.push_back(std::make_unique<AvgPoolLayer<T>>("A1", 1, config.avg_window(), 1));
}

template <typename T>
LayerStack<T>::LayerStack(const LayerStack& other)
    : config_(other.config_), last_shapes_(other.last_shapes_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

template <typename T>
LayerStack<T>& LayerStack<T>::operator=(const LayerStack& other) {
  if (this != &other) {
    LayerStack copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
Layer<T>& LayerStack<T>::layer(const std::string& name) {
  for (auto& l : layers_) {
    if (l->name() == name) return *l;
  }
  throw ArgumentError("no layer named " + name);
}

template <typename T>
std::vector<std::pair<std::string, Shape4>> LayerStack<T>::planned_shapes(std::size_t n) const {
  std::vector<std::pair<std::string, Shape4>> shapes;
  Shape4 s{n, config_.input_h, config_.input_w, config_.input_c};
  for (const auto& l : layers_) {
    s = l->output_shape(s);
    shapes.emplace_back(l->name(), s);
  }
  return shapes;
}

template <typename T>
BasicTensor4<T> LayerStack<T>::forward(const BasicTensor4<T>& input, Mode mode,
                                       std::size_t groups) {
  const Shape4 s = input.shape();
  if (s.h != config_.input_h || s.w != config_.input_w || s.c != config_.input_c) {
    throw ShapeError("layer stack expects n x " + std::to_string(config_.input_h) + " x " +
                     std::to_string(config_.input_w) + " x " + std::to_string(config_.input_c) +
                     " input, got " + s.str());
  }
  last_shapes_.clear();
  BasicTensor4<T> x = layers_.front()->forward(input, mode, groups);
  last_shapes_.emplace_back(layers_.front()->name(), x.shape());
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, mode, groups);
    last_shapes_.emplace_back(layers_[i]->name(), x.shape());
  }
  return x;
}

template <typename T>
BasicTensor4<T> LayerStack<T>::backward(const BasicTensor4<T>& grad_out) {
  BasicTensor4<T> g = layers_.back()->backward(grad_out);
  for (std::size_t i = layers_.size() - 1; i-- > 0;) g = layers_[i]->backward(g);
  return g;
}

template <typename T>
std::vector<ParamRef<T>> LayerStack<T>::params() {
  std::vector<ParamRef<T>> refs;
  for (auto& l : layers_) {
    auto p = l->params();
    refs.insert(refs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return refs;
}

template <typename T>
std::vector<ParamRef<T>> LayerStack<T>::state() {
  std::vector<ParamRef<T>> refs;
  for (auto& l : layers_) {
    auto p = l->state();
    refs.insert(refs.end(), std::make_move_iterator(p.begin()), std::make_move_iterator(p.end()));
  }
  return refs;
}

template <typename T>
void LayerStack<T>::zero_grad() {
  for (auto& l : layers_) l->zero_grad();
}

template <typename T>
std::vector<LayerParamCount> LayerStack<T>::count_params() const {
  std::vector<LayerParamCount> counts;
  for (const auto& l : layers_) {
    if (const auto* conv = dynamic_cast<const ConvLayer<T>*>(l.get())) {
      counts.push_back({l->name(), conv->filters().size(), conv->bias().size()});
    } else if (const auto* bn = dynamic_cast<const BatchNormLayer<T>*>(l.get())) {
      counts.push_back({l->name(), bn->running_mean().size(), bn->running_mean().size()});
    } else {
      counts.push_back({l->name(), 0, 0});
    }
  }
  return counts;
}

template class ConvLayer<float>;
template class ConvLayer<double>;
template class BatchNormLayer<float>;
template class BatchNormLayer<double>;
template class MaxPoolLayer<float>;
template class MaxPoolLayer<double>;
template class AvgPoolLayer<float>;
template class AvgPoolLayer<double>;
template class LayerStack<float>;
template class LayerStack<double>;

}  // namespace dhsl
