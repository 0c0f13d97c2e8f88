#include "checks.hpp"

#include <algorithm>
#include <numeric>

#include "dhsl/data.hpp"
#include "dhsl/evaluation.hpp"
#include "dhsl/kernels.hpp"
#include "dhsl/layers.hpp"
#include "dhsl/model.hpp"
#include "dhsl/trainer.hpp"
#include "test_support.hpp"

namespace dhsl::checks {

using testing::gradient_check;
using testing::random_tensor;

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Checks input and parameter gradients of L = <layer(x), r>.
double check_layer(Layer<double>& layer, BasicTensor4<double> x, std::size_t groups, std::mt19937_64& rng) {
  const auto out = layer.forward(x, Mode::train, groups);
  const auto r = random_tensor<double>(out.shape(), rng);
  layer.zero_grad();
  const auto gx = layer.backward(r);

  std::vector<double*> values;
  std::vector<double> analytic;
  for (std::size_t i = 0; i < x.size(); ++i) {
    values.push_back(&x[i]);
    analytic.push_back(gx[i]);
  }
  for (auto& p : layer.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      values.push_back(&p.value[i]);
      analytic.push_back(p.grad[i]);
    }
  }
  return gradient_check(values, analytic, [&] { return dot(layer.forward(x, Mode::train, groups).data(), r.data()); });
}

/// Inputs on a shuffled grid so that pooling windows have well separated maxima.
BasicTensor4<double> spaced_tensor(Shape4 shape, std::mt19937_64& rng) {
  std::vector<double> v(shape.size());
  std::iota(v.begin(), v.end(), 0.0);
  std::shuffle(v.begin(), v.end(), rng);
  for (auto& e : v) e = (e - static_cast<double>(v.size()) / 2) * 0.01;
  return BasicTensor4<double>(shape, std::move(v));
}

}  // namespace

std::vector<GradReport> layer_gradient_checks(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradReport> reports;

  {
    ConvLayer<double> conv("conv", 3, 3, 4, 1, 1);
    for (auto& p : conv.params()) {
      for (auto& v : p.value) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    reports.push_back({"conv", check_layer(conv, random_tensor<double>(Shape4{2, 6, 5, 3}, rng), 1, rng)});
  }
  {
    ConvLayer<double> conv("conv_strided", 3, 2, 3, 2, 1);
    for (auto& p : conv.params()) {
      for (auto& v : p.value) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    reports.push_back({"conv_strided", check_layer(conv, random_tensor<double>(Shape4{2, 7, 6, 2}, rng), 1, rng)});
  }
  for (bool relu : {false, true}) {
    for (std::size_t groups : {1u, 2u}) {
      BatchNormLayer<double> bn("bn", 3, relu);
      for (auto& g : bn.gamma()) g = std::uniform_real_distribution<double>(0.5, 1.5)(rng);
      for (auto& b : bn.beta()) b = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
      const std::string name = std::string(relu ? "batchnorm_relu" : "batchnorm") + "_groups" + std::to_string(groups);
      reports.push_back({name, check_layer(bn, random_tensor<double>(Shape4{4, 3, 3, 3}, rng), groups, rng)});
    }
  }
  {
    MaxPoolLayer<double> pool("maxpool", 3, 2, 1);
    reports.push_back({"maxpool", check_layer(pool, spaced_tensor(Shape4{2, 7, 6, 2}, rng), 1, rng)});
  }
  {
    AvgPoolLayer<double> pool("avgpool", 1, 4, 1);
    reports.push_back({"avgpool", check_layer(pool, random_tensor<double>(Shape4{2, 3, 4, 3}, rng), 1, rng)});
  }

  const std::size_t d = 7;
  auto vec = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& e : v) e = std::uniform_real_distribution<double>(-1, 1)(rng);
    return v;
  };
  for (const bool is_diff : {true, false}) {
    auto x1 = vec(d), x2 = vec(d), r = vec(d);
    const auto g = is_diff ? diff_backward<double>(x1, x2, r) : mult_backward<double>(x1, x2, r);
    std::vector<double*> values;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < d; ++i) {
      values.push_back(&x1[i]);
      analytic.push_back(g.grad_x1[i]);
    }
    for (std::size_t i = 0; i < d; ++i) {
      values.push_back(&x2[i]);
      analytic.push_back(g.grad_x2[i]);
    }
    const double err = gradient_check(values, analytic, [&] {
      const auto out = is_diff ? diff_forward<double>(x1, x2) : mult_forward<double>(x1, x2);
      return dot(out, r);
    });
    reports.push_back({is_diff ? "diff" : "mult", err});
  }
  {
    const std::size_t k = 6;
    auto w = vec(2 * d);
    FeatureMatrix<double> z(k, 2 * d, vec(k * 2 * d));
    const std::vector<int> labels{1, -1, 1, 1, -1, -1};
    const double alpha = 5e-2;
    const auto res = logistic_loss<double>(w, z, labels, alpha);
    std::vector<double*> values;
    std::vector<double> analytic;
    for (std::size_t i = 0; i < w.size(); ++i) {
      values.push_back(&w[i]);
      analytic.push_back(res.grad_w[i]);
    }
    for (std::size_t i = 0; i < z.data.size(); ++i) {
      values.push_back(&z.data[i]);
      analytic.push_back(res.grad_z.data[i]);
    }
    const double err = gradient_check(values, analytic, [&] {
      return static_cast<double>(logistic_loss<double>(w, z, labels, alpha).loss);
    });
    reports.push_back({"logistic_loss", err});
  }
  return reports;
}

GradReport end_to_end_gradient_check(std::uint64_t seed) {
  StackConfig config;
  config.input_h = 16;
  config.input_w = 8;
  config.widths = {2, 3, 4};
  Model<double> model(config);
  init_params(model, seed, 0.3);
  std::mt19937_64 rng(seed + 1);
  for (auto& v : model.head().w_d) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (auto& v : model.head().w_m) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  for (auto& p : model.params()) {
    if (p.name.find(".beta") != std::string::npos) {
      for (auto& v : p.value) v = std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    }
  }
  const auto a = random_tensor<double>(Shape4{3, 16, 8, 3}, rng, 0.0, 1.0);
  const auto b = random_tensor<double>(Shape4{3, 16, 8, 3}, rng, 0.0, 1.0);
  const std::vector<int> labels{1, -1, 1};
  const double alpha = 5e-2;

  model.zero_grad();
  pair_objective<double>(model, a, b, labels, alpha, HeadMode::hybrid, Mode::train, true);
  std::vector<double*> values;
  std::vector<double> analytic;
  for (auto& p : model.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      values.push_back(&p.value[i]);
      analytic.push_back(p.grad[i]);
    }
  }
  // A smaller step keeps perturbations from crossing ReLU / max-pool switch
  // points inside the deep stack. Conv biases ahead of batch norm have an
  // exactly zero gradient, which the 1e-5 floor compares in absolute terms.
  const double err = gradient_check(
      values, analytic,
      [&] {
        return static_cast<double>(
            pair_objective<double>(model, a, b, labels, alpha, HeadMode::hybrid, Mode::train, false).loss);
      },
      1e-6, 1e-5);
  return {"end_to_end_d" + std::to_string(model.feature_dim()), err};
}

double conv_oracle_error(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(3, 9), c(1, 4), kd(1, 3), sd(1, 2), pd(0, 1);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t k = kd(rng);
    const Shape4 shape{n(rng), std::max(hw(rng), k), std::max(hw(rng), k), c(rng)};
    const std::size_t c_out = c(rng), stride = sd(rng), pad = std::min(pd(rng), k - 1);
    const auto in = random_tensor<double>(shape, rng);
    const auto f = random_tensor<double>(Shape4{k, k, shape.c, c_out}, rng);
    std::vector<double> bias(c_out);
    for (auto& v : bias) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    const auto got = conv2d_forward<double>(in, f, bias, stride, pad);
    const auto want = testing::conv_oracle(in, f, bias, stride, pad);
    if (!(got.shape() == want.shape())) return INFINITY;
    worst = std::max(worst, testing::max_abs_diff(got.data(), want.data()));
  }
  return worst;
}

double maxpool_oracle_error(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(3, 10), c(1, 4), kd(2, 3), sd(1, 3), pd(0, 1);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t k = kd(rng);
    const Shape4 shape{n(rng), hw(rng), hw(rng), c(rng)};
    const std::size_t stride = sd(rng), pad = std::min(pd(rng), k - 1);
    const auto in = random_tensor<double>(shape, rng);
    const auto got = maxpool_forward<double>(in, k, k, stride, pad);
    const auto want = testing::maxpool_oracle(in, k, k, stride, pad);
    if (!(got.output.shape() == want.shape())) return INFINITY;
    worst = std::max(worst, testing::max_abs_diff(got.output.data(), want.data()));
  }
  return worst;
}

double avgpool_oracle_error(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> n(1, 3), hw(2, 9), c(1, 4), kd(1, 3), sd(1, 2);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const Shape4 shape{n(rng), hw(rng), hw(rng), c(rng)};
    const std::size_t kh = std::min(kd(rng), shape.h), kw = std::min(kd(rng), shape.w), stride = sd(rng);
    const auto in = random_tensor<double>(shape, rng);
    const auto got = avgpool_forward<double>(in, kh, kw, stride);
    const auto want = testing::avgpool_oracle(in, kh, kw, stride);
    if (!(got.shape() == want.shape())) return INFINITY;
    worst = std::max(worst, testing::max_abs_diff(got.data(), want.data()));
  }
  return worst;
}

std::size_t top_k_mismatches(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 200)(rng);
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n)(rng);
    std::vector<double> scores(n);
    // Coarse values force plenty of ties.
    for (auto& s : scores) s = static_cast<double>(std::uniform_int_distribution<int>(-10, 10)(rng)) * 0.5;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(k);
    if (top_k_indices(scores, k) != order) ++mismatches;
  }
  return mismatches;
}

namespace {

struct ScoreCase {
  std::vector<double> scores;
  std::size_t gallery = 0;
  std::vector<std::size_t> truth;
};

ScoreCase random_case(std::mt19937_64& rng, bool coarse) {
  ScoreCase c;
  c.gallery = std::uniform_int_distribution<std::size_t>(1, 40)(rng);
  const std::size_t probes = std::uniform_int_distribution<std::size_t>(1, 30)(rng);
  c.scores.resize(probes * c.gallery);
  for (auto& s : c.scores) {
    s = coarse ? static_cast<double>(std::uniform_int_distribution<int>(-6, 6)(rng)) * 0.5
               : std::normal_distribution<double>(0.0, 3.0)(rng);
  }
  for (std::size_t p = 0; p < probes; ++p) {
    c.truth.push_back(std::uniform_int_distribution<std::size_t>(0, c.gallery - 1)(rng));
  }
  return c;
}

}  // namespace

std::size_t cmc_shape_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto c = random_case(rng, t % 2 == 0);
    const auto curve = cmc_from_scores(c.scores, c.gallery, c.truth, t % 3 != 0);
    bool ok = curve.rates.size() == c.gallery && curve.rates.back() == 1.0;
    for (std::size_t r = 0; r < curve.rates.size(); ++r) {
      ok = ok && curve.rates[r] >= 0.0 && curve.rates[r] <= 1.0;
      if (r > 0) ok = ok && curve.rates[r] >= curve.rates[r - 1];
    }
    if (!ok) ++bad;
  }
  return bad;
}

std::size_t affine_invariance_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const bool coarse = t % 2 == 0;
    const auto c = random_case(rng, coarse);
    // Tied cases use transforms that are exact in binary floating point.
    const double a = coarse ? std::ldexp(1.0, std::uniform_int_distribution<int>(-3, 3)(rng)) * 3.0
                            : std::uniform_real_distribution<double>(0.05, 20.0)(rng);
    const double b = coarse ? static_cast<double>(std::uniform_int_distribution<int>(-50, 50)(rng))
                            : std::uniform_real_distribution<double>(-100.0, 100.0)(rng);
    auto moved = c.scores;
    for (auto& s : moved) s = a * s + b;
    for (bool higher : {true, false}) {
      if (match_ranks(c.scores, c.gallery, c.truth, higher) != match_ranks(moved, c.gallery, c.truth, higher)) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

std::size_t negation_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto c = random_case(rng, t % 2 == 0);
    auto negated = c.scores;
    for (auto& s : negated) s = -s;
    if (cmc_from_scores(c.scores, c.gallery, c.truth, true).rates !=
        cmc_from_scores(negated, c.gallery, c.truth, false).rates) {
      ++bad;
    }
  }
  return bad;
}

std::size_t distractor_growth_violations(std::size_t instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const auto c = random_case(rng, t % 2 == 0);
    const std::size_t extra = std::uniform_int_distribution<std::size_t>(1, 25)(rng);
    const std::size_t grown = c.gallery + extra;
    const std::size_t probes = c.truth.size();
    std::vector<double> wide(probes * grown);
    for (std::size_t p = 0; p < probes; ++p) {
      std::copy_n(c.scores.begin() + static_cast<std::ptrdiff_t>(p * c.gallery), c.gallery,
                  wide.begin() + static_cast<std::ptrdiff_t>(p * grown));
      for (std::size_t e = 0; e < extra; ++e) {
        wide[p * grown + c.gallery + e] = t % 2 == 0 ? static_cast<double>(std::uniform_int_distribution<int>(-6, 6)(rng)) * 0.5
                                                     : std::normal_distribution<double>(0.0, 3.0)(rng);
      }
    }
    const auto base = cmc_from_scores(c.scores, c.gallery, c.truth, true);
    const auto with = cmc_from_scores(wide, grown, c.truth, true);
    for (std::size_t r = 1; r <= grown; ++r) {
      if (with.at(r) > base.at(r)) {
        ++bad;
        break;
      }
    }
  }
  return bad;
}

std::size_t model_distractor_violations(std::uint64_t seed) {
  SynthConfig sc;
  sc.identities = 12;
  sc.images_per_camera = 1;
  sc.cameras = 2;
  sc.distractors = 30;
  sc.difficulty = 0.3;
  sc.seed = seed;
  const auto data = generate_synthetic(sc);
  Model<float> model(StackConfig::with_channel_multiplier(0.25));
  init_params(model, seed);

  std::vector<int> ids;
  for (const auto& e : data.manifest.entries) {
    if (!e.is_distractor && std::find(ids.begin(), ids.end(), e.identity) == ids.end()) ids.push_back(e.identity);
  }
  const auto plain = plan_gallery(data.manifest, ids, false);
  const auto grown = plan_gallery(data.manifest, ids, true);
  const auto probes = extract_features(model, data.images, plain.probe_entries);
  const auto small = extract_features(model, data.images, plain.gallery_entries);
  const auto large = extract_features(model, data.images, grown.gallery_entries);

  std::size_t bad = 0;
  for (auto kind : {MetricKind::hybrid, MetricKind::euclidean}) {
    const MetricScorer scorer(kind, &model.head());
    const auto base = evaluate_features(probes, small, plain.probe_truth, scorer);
    const auto with = evaluate_features(probes, large, grown.probe_truth, scorer);
    for (std::size_t r = 1; r <= with.rates.size(); ++r) {
      if (with.at(r) > base.at(r)) ++bad;
    }
  }
  return bad;
}

bool ChanceReport::within_three_sigma() const {
  return std::abs(static_cast<double>(hits) - expected) <= 3.0 * sigma;
}

ChanceReport untrained_chance_level(std::size_t gallery, std::size_t trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ChanceReport report;
  for (std::size_t t = 0; t < trials; ++t) {
    Model<float> model(StackConfig::with_channel_multiplier(0.25));
    init_params(model, rng());
    std::vector<ImageRecord> images(2 * gallery);
    for (auto& rec : images) {
      rec = Image(kImageHeight, kImageWidth);
      for (auto& v : rec.pixels) v = static_cast<float>(std::uniform_real_distribution<double>(0, 1)(rng));
    }
    std::vector<std::size_t> probe_entries(gallery), gallery_entries(gallery), truth(gallery);
    std::iota(probe_entries.begin(), probe_entries.end(), std::size_t{0});
    std::iota(gallery_entries.begin(), gallery_entries.end(), gallery);
    std::iota(truth.begin(), truth.end(), std::size_t{0});
    const auto probes = extract_features(model, images, probe_entries);
    const auto gal = extract_features(model, images, gallery_entries);
    const auto curve = evaluate_features(probes, gal, truth, MetricScorer(MetricKind::hybrid, &model.head()));
    report.hits += static_cast<std::size_t>(std::lround(curve.rates[0] * static_cast<double>(gallery)));
    report.probes += gallery;
  }
  const double p = 1.0 / static_cast<double>(gallery);
  report.expected = p * static_cast<double>(report.probes);
  report.sigma = std::sqrt(static_cast<double>(report.probes) * p * (1.0 - p));
  return report;
}

}  // namespace dhsl::checks
