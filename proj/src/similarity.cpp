#include "dhsl/similarity.hpp"

#include <algorithm>
#include <cmath>

namespace dhsl {

namespace {

template <typename T>
void require_same_dim(const char* op, std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": dimension mismatch " + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()));
  }
}

}  // namespace

std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::hybrid: return "hybrid";
    case MetricKind::diff_only: return "diff-only";
    case MetricKind::mult_only: return "mult-only";
    case MetricKind::euclidean: return "euclidean";
    case MetricKind::cosine: return "cosine";
    case MetricKind::mahalanobis: return "mahalanobis";
  }
  return "unknown";
}

MetricKind parse_metric_kind(const std::string& text) {
  for (auto kind : {MetricKind::hybrid, MetricKind::diff_only, MetricKind::mult_only,
                    MetricKind::euclidean, MetricKind::cosine, MetricKind::mahalanobis}) {
    if (to_string(kind) == text) return kind;
  }
  throw ConfigError("unknown metric '" + text + "'");
}

bool higher_is_more_similar(MetricKind kind) {
  return kind != MetricKind::euclidean && kind != MetricKind::mahalanobis;
}

std::size_t count_metric_params(MetricKind kind, std::size_t d) {
  if (d == 0) throw ArgumentError("feature dimension must be >= 1");
  switch (kind) {
    case MetricKind::mahalanobis: return d * d;
    case MetricKind::euclidean:
    case MetricKind::cosine: return 0;
    case MetricKind::hybrid: return 2 * d;
    case MetricKind::diff_only:
    case MetricKind::mult_only: return d;
  }
  return 0;
}

template <typename T>
std::vector<T> diff_forward(std::span<const T> x1, std::span<const T> x2) {
  require_same_dim("diff", x1, x2);
  std::vector<T> out(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) out[i] = std::abs(x1[i] - x2[i]);
  return out;
}

template <typename T>
InputGrads<T> diff_backward(std::span<const T> x1, std::span<const T> x2,
                            std::span<const T> grad_diff) {
  require_same_dim("diff backward", x1, x2);
  require_same_dim("diff backward", x1, grad_diff);
  InputGrads<T> g{std::vector<T>(x1.size()), std::vector<T>(x1.size())};
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const T sign = x1[i] > x2[i] ? T(1) : (x1[i] == x2[i] ? T(0) : T(-1));
    g.grad_x1[i] = grad_diff[i] * sign;
    g.grad_x2[i] = -g.grad_x1[i];
  }
  return g;
}

template <typename T>
std::vector<T> mult_forward(std::span<const T> x1, std::span<const T> x2) {
  require_same_dim("mult", x1, x2);
  std::vector<T> out(x1.size());
  for (std::size_t i = 0; i < x1.size(); ++i) out[i] = x1[i] * x2[i];
  return out;
}

template <typename T>
InputGrads<T> mult_backward(std::span<const T> x1, std::span<const T> x2,
                            std::span<const T> grad_mult) {
  require_same_dim("mult backward", x1, x2);
  require_same_dim("mult backward", x1, grad_mult);
  InputGrads<T> g{std::vector<T>(x1.size()), std::vector<T>(x1.size())};
  for (std::size_t i = 0; i < x1.size(); ++i) {
    g.grad_x1[i] = grad_mult[i] * x2[i];
    g.grad_x2[i] = grad_mult[i] * x1[i];
  }
  return g;
}

template <typename T>
std::vector<T> HybridWeights<T>::concatenated() const {
  std::vector<T> w(w_d);
  w.insert(w.end(), w_m.begin(), w_m.end());
  return w;
}

template <typename T>
HybridWeights<T> HybridWeights<T>::from_concatenated(std::span<const T> w) {
  if (w.size() % 2 != 0) throw ShapeError("hybrid weight vector must have even length");
  HybridWeights out;
  const std::size_t d = w.size() / 2;
  out.w_d.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
  out.w_m.assign(w.begin() + static_cast<std::ptrdiff_t>(d), w.end());
  return out;
}

template <typename T>
HybridTerms<T> hybrid_terms(const HybridWeights<T>& w, std::span<const T> x1,
                            std::span<const T> x2) {
  require_same_dim("hybrid score", x1, x2);
  if (w.w_d.size() != x1.size() || w.w_m.size() != x1.size()) {
    throw ShapeError("hybrid score: weights of dimension " + std::to_string(w.w_d.size()) +
                     " vs features of dimension " + std::to_string(x1.size()));
  }
  double diff = 0.0, mult = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    diff += static_cast<double>(w.w_d[i]) * std::abs(x1[i] - x2[i]);
    mult += static_cast<double>(w.w_m[i]) * (x1[i] * x2[i]);
  }
  return {static_cast<T>(diff), static_cast<T>(mult)};
}

template <typename T>
T hybrid_score(const HybridWeights<T>& w, std::span<const T> x1, std::span<const T> x2) {
  return hybrid_terms(w, x1, x2).score();
}

template <typename T>
std::vector<T> pair_feature(std::span<const T> x1, std::span<const T> x2) {
  std::vector<T> z = diff_forward(x1, x2);
  const std::vector<T> m = mult_forward(x1, x2);
  z.insert(z.end(), m.begin(), m.end());
  return z;
}

double softplus(double t) { return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))); }

template <typename T>
LossResult<T> logistic_loss(std::span<const T> w, const FeatureMatrix<T>& z,
                            std::span<const int> labels, double alpha) {
  if (z.rows == 0) throw ArgumentError("logistic loss: empty batch");
  if (alpha < 0.0) throw ArgumentError("logistic loss: alpha must be >= 0");
  if (labels.size() != z.rows) {
    throw ShapeError("logistic loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(z.rows) + " samples");
  }
  if (z.cols != w.size()) {
    throw ShapeError("logistic loss: weights of length " + std::to_string(w.size()) +
                     " vs features of length " + std::to_string(z.cols));
  }
  const double k_inv = 1.0 / static_cast<double>(z.rows);
  LossResult<T> out{T(0), std::vector<T>(w.size(), T(0)), FeatureMatrix<T>(z.rows, z.cols)};
  std::vector<double> grad_w(w.size(), 0.0);
  double data_term = 0.0;
  for (std::size_t k = 0; k < z.rows; ++k) {
    const int y = labels[k];
    if (y != 1 && y != -1) throw ArgumentError("logistic loss: labels must be +1 or -1");
    const auto zk = z.row(k);
    double t = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) t += static_cast<double>(w[i]) * zk[i];
    const double margin = -y * t;
    data_term += softplus(margin);
    // d softplus(-y t)/dt = -y * sigmoid(-y t)
    const double sig = margin >= 0 ? 1.0 / (1.0 + std::exp(-margin))
                                   : std::exp(margin) / (1.0 + std::exp(margin));
    const double dt = -y * sig * k_inv;
    auto gz = out.grad_z.row(k);
    for (std::size_t i = 0; i < w.size(); ++i) {
      gz[i] = static_cast<T>(dt * w[i]);
      grad_w[i] += dt * zk[i];
    }
  }
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    norm_sq += static_cast<double>(w[i]) * w[i];
    out.grad_w[i] = static_cast<T>(grad_w[i] + alpha * w[i]);
  }
  out.loss = static_cast<T>(data_term * k_inv + 0.5 * alpha * norm_sq);
  return out;
}

template <typename T>
T euclidean_score(std::span<const T> x1, std::span<const T> x2) {
  require_same_dim("euclidean", x1, x2);
  double s = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    const double d = static_cast<double>(x1[i]) - x2[i];
    s += d * d;
  }
  return static_cast<T>(s);
}

template <typename T>
T cosine_score(std::span<const T> x1, std::span<const T> x2) {
  require_same_dim("cosine", x1, x2);
  double n1 = 0.0, n2 = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < x1.size(); ++i) {
    n1 += static_cast<double>(x1[i]) * x1[i];
    n2 += static_cast<double>(x2[i]) * x2[i];
    dot += static_cast<double>(x1[i]) * x2[i];
  }
  if (std::abs(std::sqrt(n1) - 1.0) > 1e-6 || std::abs(std::sqrt(n2) - 1.0) > 1e-6) {
    throw PreconditionError("cosine score requires l2-normalized inputs");
  }
  return static_cast<T>(dot);
}

template <typename T>
T mahalanobis_score(const FeatureMatrix<T>& m, std::span<const T> x1, std::span<const T> x2) {
  require_same_dim("mahalanobis", x1, x2);
  if (m.rows != x1.size() || m.cols != x1.size()) {
    throw ShapeError("mahalanobis: matrix is " + std::to_string(m.rows) + "x" +
                     std::to_string(m.cols) + " for features of dimension " +
                     std::to_string(x1.size()));
  }
  const std::size_t d = x1.size();
  std::vector<double> delta(d);
  for (std::size_t i = 0; i < d; ++i) delta[i] = static_cast<double>(x1[i]) - x2[i];
  double s = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    double row = 0.0;
    const auto mr = m.row(r);
    for (std::size_t c = 0; c < d; ++c) row += mr[c] * delta[c];
    s += delta[r] * row;
  }
  return static_cast<T>(s);
}

template <typename T>
std::vector<T> l2_normalized(std::span<const T> x) {
  double n = 0.0;
  for (T v : x) n += static_cast<double>(v) * v;
  std::vector<T> out(x.begin(), x.end());
  if (n > 0.0) {
    const double inv = 1.0 / std::sqrt(n);
    for (auto& v : out) v = static_cast<T>(v * inv);
  }
  return out;
}

#define DHSL_INSTANTIATE_SIMILARITY(T)                                                          \
  template std::vector<T> diff_forward(std::span<const T>, std::span<const T>);                 \
  template InputGrads<T> diff_backward(std::span<const T>, std::span<const T>,                  \
                                       std::span<const T>);                                     \
  template std::vector<T> mult_forward(std::span<const T>, std::span<const T>);                 \
  template InputGrads<T> mult_backward(std::span<const T>, std::span<const T>,                  \
                                       std::span<const T>);                                     \
  template struct HybridWeights<T>;                                                             \
  template HybridTerms<T> hybrid_terms(const HybridWeights<T>&, std::span<const T>,             \
                                       std::span<const T>);                                     \
  template T hybrid_score(const HybridWeights<T>&, std::span<const T>, std::span<const T>);     \
  template std::vector<T> pair_feature(std::span<const T>, std::span<const T>);                 \
  template LossResult<T> logistic_loss(std::span<const T>, const FeatureMatrix<T>&,             \
                                       std::span<const int>, double);                           \
  template T euclidean_score(std::span<const T>, std::span<const T>);                           \
  template T cosine_score(std::span<const T>, std::span<const T>);                              \
  template T mahalanobis_score(const FeatureMatrix<T>&, std::span<const T>, std::span<const T>); \
  template std::vector<T> l2_normalized(std::span<const T>);

DHSL_INSTANTIATE_SIMILARITY(float)
DHSL_INSTANTIATE_SIMILARITY(double)

#undef DHSL_INSTANTIATE_SIMILARITY

}  // namespace dhsl
