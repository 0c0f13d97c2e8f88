#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dhsl/layers.hpp"
#include "dhsl/siamese.hpp"
#include "dhsl/similarity.hpp"

namespace dhsl {

/// Which halves of the hybrid head are trained. diff_only keeps w_m at 0,
/// mult_only keeps w_d at 0.
enum class HeadMode { hybrid, diff_only, mult_only };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

/// Every parameter of the network: the shared extractor stack plus the
/// hybrid projection weights.
template <typename T>
class Model {
 public:
  explicit Model(const StackConfig& config = {});

  LayerStack<T>& stack() noexcept { return stack_; }
  const LayerStack<T>& stack() const noexcept { return stack_; }
  HybridWeights<T>& head() noexcept { return head_; }
  const HybridWeights<T>& head() const noexcept { return head_; }
  std::size_t feature_dim() const { return stack_.feature_dim(); }

  /// Learnable parameters: stack layers first, then head.w_d and head.w_m.
  std::vector<ParamRef<T>> params();
  /// Learnable parameters plus batch-norm running statistics.
  std::vector<ParamRef<T>> state();
  void zero_grad();

  std::size_t num_learnable();
  std::vector<T> flatten_params();
  void unflatten_params(std::span<const T> values);

  /// Sets the head half that `mode` excludes to zero.
  void apply_head_mode(HeadMode mode);

 private:
  LayerStack<T> stack_;
  HybridWeights<T> head_;
  HybridWeights<T> head_grad_;
};

/// Conv filters and head weights ~ N(0, stddev^2), biases and shifts 0,
/// scales 1, running statistics (0, 1). Deterministic per seed.
template <typename T>
void init_params(Model<T>& model, std::uint64_t seed, double stddev = 0.01);

template <typename T>
struct ObjectiveResult {
  T loss = 0;
  FeaturePairs<T> features;
  std::vector<T> scores;
};

/// Runs both branches, the hybrid head and the log-logistic loss on a batch
/// of image pairs. With `backward` set, gradients of the loss are
/// accumulated into every learnable parameter (call zero_grad first).
template <typename T>
ObjectiveResult<T> pair_objective(Model<T>& model, const BasicTensor4<T>& first,
                                  const BasicTensor4<T>& second, std::span<const int> labels,
                                  double alpha, HeadMode head_mode, Mode mode = Mode::train,
                                  bool backward = true);

}  // namespace dhsl
