#include "dhsl/model.hpp"

#include <algorithm>
#include <random>

namespace dhsl {

std::string to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::hybrid: return "hybrid";
    case HeadMode::diff_only: return "diff-only";
    case HeadMode::mult_only: return "mult-only";
  }
  return "unknown";
}

HeadMode parse_head_mode(const std::string& text) {
  for (auto mode : {HeadMode::hybrid, HeadMode::diff_only, HeadMode::mult_only}) {
    if (to_string(mode) == text) return mode;
  }
  throw ConfigError("unknown head mode '" + text + "'");
}

template <typename T>
Model<T>::Model(const StackConfig& config)
    : stack_(config), head_(config.feature_dim()), head_grad_(config.feature_dim()) {}

template <typename T>
std::vector<ParamRef<T>> Model<T>::params() {
  auto refs = stack_.params();
  const std::size_t d = head_.dim();
  refs.push_back({"head.w_d", {d}, std::span<T>(head_.w_d), std::span<T>(head_grad_.w_d)});
  refs.push_back({"head.w_m", {d}, std::span<T>(head_.w_m), std::span<T>(head_grad_.w_m)});
  return refs;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::state() {
  auto refs = stack_.state();
  const std::size_t d = head_.dim();
  refs.push_back({"head.w_d", {d}, std::span<T>(head_.w_d), std::span<T>(head_grad_.w_d)});
  refs.push_back({"head.w_m", {d}, std::span<T>(head_.w_m), std::span<T>(head_grad_.w_m)});
  return refs;
}

template <typename T>
void Model<T>::zero_grad() {
  stack_.zero_grad();
  std::fill(head_grad_.w_d.begin(), head_grad_.w_d.end(), T(0));
  std::fill(head_grad_.w_m.begin(), head_grad_.w_m.end(), T(0));
}

template <typename T>
std::size_t Model<T>::num_learnable() {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.value.size();
  return n;
}

template <typename T>
std::vector<T> Model<T>::flatten_params() {
  std::vector<T> flat;
  flat.reserve(num_learnable());
  for (const auto& p : params()) flat.insert(flat.end(), p.value.begin(), p.value.end());
  return flat;
}

template <typename T>
void Model<T>::unflatten_params(std::span<const T> values) {
  auto refs = params();
  std::size_t total = 0;
  for (const auto& p : refs) total += p.value.size();
  if (values.size() != total) {
    throw ShapeError("parameter vector has " + std::to_string(values.size()) +
                     " entries, model needs " + std::to_string(total));
  }
  std::size_t offset = 0;
  for (auto& p : refs) {
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(offset), p.value.size(),
                p.value.begin());
    offset += p.value.size();
  }
}

template <typename T>
void Model<T>::apply_head_mode(HeadMode mode) {
  if (mode == HeadMode::diff_only) std::fill(head_.w_m.begin(), head_.w_m.end(), T(0));
  if (mode == HeadMode::mult_only) std::fill(head_.w_d.begin(), head_.w_d.end(), T(0));
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename T>
void init_params(Model<T>& model, std::uint64_t seed, double stddev) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& p : model.state()) {
    if (ends_with(p.name, ".filters") || p.name.rfind("head.", 0) == 0) {
      for (auto& v : p.value) v = static_cast<T>(normal(rng));
    } else if (ends_with(p.name, ".gamma") || ends_with(p.name, ".running_var")) {
      std::fill(p.value.begin(), p.value.end(), T(1));
    } else {
      std::fill(p.value.begin(), p.value.end(), T(0));
    }
  }
}

template <typename T>
ObjectiveResult<T> pair_objective(Model<T>& model, const BasicTensor4<T>& first,
                                  const BasicTensor4<T>& second, std::span<const int> labels,
                                  double alpha, HeadMode head_mode, Mode mode, bool backward) {
  SiameseExtractor<T> extractor(model.stack());
  ObjectiveResult<T> result;
  result.features = extractor.extract_pair(first, second, mode);
  const auto& x1 = result.features.x1;
  const auto& x2 = result.features.x2;
  const std::size_t k = x1.rows;
  const std::size_t d = x1.cols;

  FeatureMatrix<T> z(k, 2 * d);
  for (std::size_t i = 0; i < k; ++i) {
    const auto zi = pair_feature(x1.row(i), x2.row(i));
    std::copy(zi.begin(), zi.end(), z.row(i).begin());
  }
  const std::vector<T> w = model.head().concatenated();
  LossResult<T> loss = logistic_loss<T>(w, z, labels, alpha);
  result.loss = loss.loss;
  result.scores.resize(k);
  for (std::size_t i = 0; i < k; ++i) result.scores[i] = hybrid_score(model.head(), x1.row(i), x2.row(i));
  if (!backward) return result;

  FeatureMatrix<T> g1(k, d), g2(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    const auto gz = loss.grad_z.row(i);
    const auto gd = diff_backward<T>(x1.row(i), x2.row(i), gz.first(d));
    const auto gm = mult_backward<T>(x1.row(i), x2.row(i), gz.subspan(d, d));
    auto r1 = g1.row(i);
    auto r2 = g2.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      r1[j] = gd.grad_x1[j] + gm.grad_x1[j];
      r2[j] = gd.grad_x2[j] + gm.grad_x2[j];
    }
  }
  extractor.backward_pair(g1, g2);

  auto refs = model.params();
  auto& grad_wd = refs[refs.size() - 2].grad;
  auto& grad_wm = refs[refs.size() - 1].grad;
  for (std::size_t j = 0; j < d; ++j) {
    grad_wd[j] += loss.grad_w[j];
    grad_wm[j] += loss.grad_w[d + j];
  }
  if (head_mode == HeadMode::diff_only) std::fill(grad_wm.begin(), grad_wm.end(), T(0));
  if (head_mode == HeadMode::mult_only) std::fill(grad_wd.begin(), grad_wd.end(), T(0));
  return result;
}

template class Model<float>;
template class Model<double>;
template void init_params(Model<float>&, std::uint64_t, double);
template void init_params(Model<double>&, std::uint64_t, double);
template ObjectiveResult<float> pair_objective(Model<float>&, const BasicTensor4<float>&,
                                               const BasicTensor4<float>&, std::span<const int>,
                                               double, HeadMode, Mode, bool);
template ObjectiveResult<double> pair_objective(Model<double>&, const BasicTensor4<double>&,
                                                const BasicTensor4<double>&, std::span<const int>,
                                                double, HeadMode, Mode, bool);

}  // namespace dhsl
