#pragma once

#include "dhsl/features.hpp"
#include "dhsl/layers.hpp"

namespace dhsl {

template <typename T>
struct FeaturePairs {
  FeatureMatrix<T> x1;
  FeatureMatrix<T> x2;
};

/// Two feature-extraction branches over one shared LayerStack.
///
/// The stack is referenced, never copied, so both branches always see the
/// same parameters. A pair forward runs the two image batches as one
/// concatenated batch split into two statistic groups: in train mode both
/// branches share the same batch-norm statistics, and swapping the branches
/// swaps the outputs bit for bit.
template <typename T>
class SiameseExtractor {
 public:
  explicit SiameseExtractor(LayerStack<T>& stack) : stack_(&stack) {}

  FeaturePairs<T> extract_pair(const BasicTensor4<T>& first, const BasicTensor4<T>& second,
                               Mode mode);

  /// Single-branch forward, one feature row per image.
  FeatureMatrix<T> extract_single(const BasicTensor4<T>& images, Mode mode = Mode::infer);

  /// Backpropagates feature gradients of the last extract_pair call; the
  /// shared parameter gradients receive the sum of both branches.
  void backward_pair(const FeatureMatrix<T>& grad_x1, const FeatureMatrix<T>& grad_x2);

  /// Backpropagates through the last extract_single call.
  void backward_single(const FeatureMatrix<T>& grad_x);

  LayerStack<T>& stack() noexcept { return *stack_; }

 private:
  enum class Cached { none, pair, single };

  FeatureMatrix<T> flatten(const BasicTensor4<T>& out, std::size_t begin, std::size_t count) const;
  BasicTensor4<T> unflatten(const FeatureMatrix<T>& a, const FeatureMatrix<T>* b) const;

  LayerStack<T>* stack_;
  Cached cached_ = Cached::none;
  std::size_t cached_rows_ = 0;
  Shape4 out_shape_{};
};

}  // namespace dhsl
