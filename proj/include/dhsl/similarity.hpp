#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dhsl/features.hpp"

namespace dhsl {

/// Scoring functions that can rank a gallery. `hybrid`, `diff_only`,
/// `mult_only` and `cosine` are similarities (higher ranks first);
/// `euclidean` and `mahalanobis` are squared distances (lower ranks first).
enum class MetricKind { hybrid, diff_only, mult_only, euclidean, cosine, mahalanobis };

std::string to_string(MetricKind kind);
MetricKind parse_metric_kind(const std::string& text);
bool higher_is_more_similar(MetricKind kind);

/// Number of learned parameters a metric needs on d-dimensional features:
/// mahalanobis d*d, euclidean 0, cosine 0, hybrid 2d (diff_only and
/// mult_only learn one half of the hybrid head, d each).
std::size_t count_metric_params(MetricKind kind, std::size_t d);

template <typename T>
struct InputGrads {
  std::vector<T> grad_x1;
  std::vector<T> grad_x2;
};

/// |x1 - x2| element-wise.
template <typename T>
std::vector<T> diff_forward(std::span<const T> x1, std::span<const T> x2);

/// d|x1-x2|/dx1 is +1, 0 or -1 depending on whether x1 > x2, x1 == x2 or
/// x1 < x2; d/dx2 is its negation. The tie derivative is exactly 0.
template <typename T>
InputGrads<T> diff_backward(std::span<const T> x1, std::span<const T> x2,
                            std::span<const T> grad_diff);

/// x1 .* x2 element-wise.
template <typename T>
std::vector<T> mult_forward(std::span<const T> x1, std::span<const T> x2);

template <typename T>
InputGrads<T> mult_backward(std::span<const T> x1, std::span<const T> x2,
                            std::span<const T> grad_mult);

/// Projection weights of the hybrid head. Concatenated as [w_d, w_m] they
/// form the 2d-dimensional vector the logistic objective optimizes.
template <typename T>
struct HybridWeights {
  std::vector<T> w_d;
  std::vector<T> w_m;

  HybridWeights() = default;
  explicit HybridWeights(std::size_t d) : w_d(d, T(0)), w_m(d, T(0)) {}

  std::size_t dim() const noexcept { return w_d.size(); }
  std::vector<T> concatenated() const;
  static HybridWeights from_concatenated(std::span<const T> w);

  friend bool operator==(const HybridWeights&, const HybridWeights&) = default;
};

/// The two projections that add up to the hybrid score.
template <typename T>
struct HybridTerms {
  T diff_term = 0;  // w_d . |x1 - x2|
  T mult_term = 0;  // w_m . (x1 .* x2)

  T score() const noexcept { return diff_term + mult_term; }
};

template <typename T>
HybridTerms<T> hybrid_terms(const HybridWeights<T>& w, std::span<const T> x1,
                            std::span<const T> x2);

/// w_d . |x1 - x2| + w_m . (x1 .* x2); symmetric in (x1, x2).
template <typename T>
T hybrid_score(const HybridWeights<T>& w, std::span<const T> x1, std::span<const T> x2);

/// The 2d-dimensional pair feature [|x1 - x2|, x1 .* x2].
template <typename T>
std::vector<T> pair_feature(std::span<const T> x1, std::span<const T> x2);

/// log(1 + e^t), evaluated as max(t, 0) + log1p(e^-|t|).
double softplus(double t);

template <typename T>
struct LossResult {
  T loss = 0;
  std::vector<T> grad_w;     // 2d
  FeatureMatrix<T> grad_z;   // K x 2d
};

/// Mean log-logistic pair loss plus (alpha/2)||w||^2.
///
/// `z` holds one pair feature per row and `labels` is +1 for same-identity
/// pairs, -1 otherwise. Throws ArgumentError on an empty batch, a negative
/// alpha or labels outside {-1, +1}.
template <typename T>
LossResult<T> logistic_loss(std::span<const T> w, const FeatureMatrix<T>& z,
                            std::span<const int> labels, double alpha);

/// Squared Euclidean distance.
template <typename T>
T euclidean_score(std::span<const T> x1, std::span<const T> x2);

/// Dot product of two l2-normalized vectors. Throws PreconditionError when
/// either norm differs from 1 by more than 1e-6.
template <typename T>
T cosine_score(std::span<const T> x1, std::span<const T> x2);

/// (x1 - x2)^T M (x1 - x2) for a fixed d x d matrix M.
template <typename T>
T mahalanobis_score(const FeatureMatrix<T>& m, std::span<const T> x1, std::span<const T> x2);

/// Scales `x` to unit l2 norm (zero vectors are left unchanged).
template <typename T>
std::vector<T> l2_normalized(std::span<const T> x);

}  // namespace dhsl
