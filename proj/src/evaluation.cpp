#include "dhsl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "dhsl/parallel.hpp"

namespace dhsl {

namespace fs = std::filesystem;

double CmcCurve::at(std::size_t rank) const {
  if (rank == 0) throw ArgumentError("ranks start at 1");
  if (rates.empty()) throw StateError("empty CMC curve");
  return rates[std::min(rank, rates.size()) - 1];
}

RankTable rank_table(const CmcCurve& curve, std::span<const std::size_t> ranks) {
  RankTable t;
  for (std::size_t r : ranks) {
    t.ranks.push_back(r);
    t.rates.push_back(curve.at(r));
  }
  return t;
}

std::vector<std::size_t> match_ranks(std::span<const double> scores, std::size_t gallery,
                                     std::span<const std::size_t> truth, bool higher_is_better) {
  if (gallery == 0) throw ArgumentError("empty gallery");
  if (scores.size() != truth.size() * gallery) throw ShapeError("score matrix does not match the probe count");
  std::vector<std::size_t> ranks(truth.size());
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (truth[p] >= gallery) throw ProtocolError("probe " + std::to_string(p) + " has no match in the gallery");
    const auto row = scores.subspan(p * gallery, gallery);
    const double target = row[truth[p]];
    std::size_t better = 0;
    for (std::size_t g = 0; g < gallery; ++g) {
      if (g == truth[p]) continue;
      const bool wins = higher_is_better ? row[g] > target : row[g] < target;
      if (wins || (row[g] == target && g < truth[p])) ++better;
    }
    ranks[p] = better + 1;
  }
  return ranks;
}

CmcCurve cmc_from_ranks(std::span<const std::size_t> ranks, std::size_t gallery) {
  if (ranks.empty()) throw ArgumentError("no probes to evaluate");
  CmcCurve curve;
  curve.gallery_size = gallery;
  curve.probes = ranks.size();
  std::vector<std::size_t> hits(gallery, 0);
  for (std::size_t r : ranks) {
    if (r == 0 || r > gallery) throw ArgumentError("rank outside the gallery");
    ++hits[r - 1];
  }
  curve.rates.resize(gallery);
  std::size_t cumulative = 0;
  for (std::size_t r = 0; r < gallery; ++r) {
    cumulative += hits[r];
    curve.rates[r] = static_cast<double>(cumulative) / static_cast<double>(ranks.size());
  }
  return curve;
}

CmcCurve cmc_from_scores(std::span<const double> scores, std::size_t gallery,
                         std::span<const std::size_t> truth, bool higher_is_better) {
  return cmc_from_ranks(match_ranks(scores, gallery, truth, higher_is_better), gallery);
}

MetricScorer::MetricScorer(MetricKind kind, const HybridWeights<float>* head,
                           const FeatureMatrix<float>* matrix)
    : kind_(kind), head_(head), matrix_(matrix) {
  const bool learned = kind == MetricKind::hybrid || kind == MetricKind::diff_only || kind == MetricKind::mult_only;
  if (learned && head == nullptr) throw ArgumentError(to_string(kind) + " scoring needs head weights");
  if (kind == MetricKind::mahalanobis && matrix == nullptr) {
    throw ArgumentError("mahalanobis scoring needs a matrix");
  }
}

double MetricScorer::score(std::span<const float> x1, std::span<const float> x2) const {
  switch (kind_) {
    case MetricKind::hybrid:
      return static_cast<double>(hybrid_terms<float>(*head_, x1, x2).score());
    case MetricKind::diff_only:
      return static_cast<double>(hybrid_terms<float>(*head_, x1, x2).diff_term);
    case MetricKind::mult_only:
      return static_cast<double>(hybrid_terms<float>(*head_, x1, x2).mult_term);
    case MetricKind::euclidean:
      return static_cast<double>(euclidean_score<float>(x1, x2));
    case MetricKind::cosine: {
      const auto a = l2_normalized<float>(x1);
      const auto b = l2_normalized<float>(x2);
      const bool zero_a = std::all_of(a.begin(), a.end(), [](float v) { return v == 0.0f; });
      const bool zero_b = std::all_of(b.begin(), b.end(), [](float v) { return v == 0.0f; });
      if (zero_a || zero_b) return 0.0;
      return static_cast<double>(cosine_score<float>(a, b));
    }
    case MetricKind::mahalanobis:
      return static_cast<double>(mahalanobis_score<float>(*matrix_, x1, x2));
  }
  return 0.0;
}

std::vector<double> MetricScorer::score_matrix(const FeatureMatrix<float>& probes,
                                               const FeatureMatrix<float>& gallery) const {
  if (probes.cols != gallery.cols) throw ShapeError("probe and gallery features differ in dimension");
  std::vector<double> scores(probes.rows * gallery.rows);
  parallel_for(probes.rows, [&](std::size_t p) {
    for (std::size_t g = 0; g < gallery.rows; ++g) scores[p * gallery.rows + g] = score(probes.row(p), gallery.row(g));
  });
  return scores;
}

GalleryPlan plan_gallery(const DatasetManifest& manifest, std::span<const int> test_ids,
                         bool with_distractors) {
  std::map<int, std::map<int, std::vector<std::size_t>>> by_id_cam;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (!e.is_distractor) by_id_cam[e.identity][e.camera].push_back(i);
  }
  std::vector<int> ids(test_ids.begin(), test_ids.end());
  std::sort(ids.begin(), ids.end());
  GalleryPlan plan;
  std::vector<std::pair<int, std::vector<std::size_t>>> probes_per_id;
  for (int id : ids) {
    const auto it = by_id_cam.find(id);
    if (it == by_id_cam.end()) throw ProtocolError("test identity " + std::to_string(id) + " has no images");
    const auto& cams = it->second;
    if (cams.size() < 2) {
      throw ProtocolError("test identity " + std::to_string(id) + " is absent from the gallery camera");
    }
    auto cam = cams.begin();
    const auto& probe_imgs = cam->second;
    ++cam;
    plan.gallery_entries.push_back(cam->second.front());
    probes_per_id.emplace_back(id, probe_imgs);
  }
  plan.gallery_identities = plan.gallery_entries.size();
  for (std::size_t g = 0; g < probes_per_id.size(); ++g) {
    for (std::size_t e : probes_per_id[g].second) {
      plan.probe_entries.push_back(e);
      plan.probe_truth.push_back(g);
    }
  }
  if (with_distractors) {
    for (std::size_t i : manifest.distractor_indices()) plan.gallery_entries.push_back(i);
  }
  return plan;
}

FeatureMatrix<float> extract_features(Model<float>& model, std::span<const ImageRecord> images,
                                      std::span<const std::size_t> entries, std::size_t chunk) {
  SiameseExtractor<float> extractor(model.stack());
  FeatureMatrix<float> out(entries.size(), model.feature_dim());
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t begin = 0; begin < entries.size(); begin += chunk) {
    const std::size_t end = std::min(entries.size(), begin + chunk);
    std::vector<const ImageRecord*> recs;
    for (std::size_t i = begin; i < end; ++i) {
      if (entries[i] >= images.size()) throw ArgumentError("entry outside the loaded images");
      recs.push_back(&images[entries[i]]);
    }
    const auto f = extractor.extract_single(to_tensor<float>(recs), Mode::infer);
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(begin * out.cols));
  }
  return out;
}

CmcCurve evaluate_features(const FeatureMatrix<float>& probes, const FeatureMatrix<float>& gallery,
                           std::span<const std::size_t> truth, const MetricScorer& scorer) {
  const auto scores = scorer.score_matrix(probes, gallery);
  return cmc_from_scores(scores, gallery.rows, truth, scorer.higher_is_better());
}

CmcCurve evaluate_trial(Model<float>& model, const ProtocolSplit& split,
                        const DatasetManifest& manifest, std::span<const ImageRecord> images,
                        MetricKind metric) {
  const GalleryPlan plan = plan_gallery(manifest, split.test_ids, split.distractors_in_gallery);
  const auto probes = extract_features(model, images, plan.probe_entries);
  const auto gallery = extract_features(model, images, plan.gallery_entries);
  const MetricScorer scorer(metric, &model.head());
  CmcCurve curve = evaluate_features(probes, gallery, plan.probe_truth, scorer);
  curve.gallery_identities = plan.gallery_identities;
  return curve;
}

CmcCurve average_curves(std::span<const CmcCurve> curves) {
  if (curves.empty()) throw ArgumentError("no curves to average");
  CmcCurve avg = curves.front();
  std::fill(avg.rates.begin(), avg.rates.end(), 0.0);
  avg.probes = 0;
  for (const auto& c : curves) {
    if (c.rates.size() != avg.rates.size()) throw ArgumentError("curves differ in gallery size");
    for (std::size_t r = 0; r < c.rates.size(); ++r) avg.rates[r] += c.rates[r];
    avg.probes += c.probes;
  }
  for (auto& r : avg.rates) r /= static_cast<double>(curves.size());
  avg.trials = curves.size();
  return avg;
}

ProtocolResult evaluate_protocol(std::span<Model<float>* const> models,
                                 std::span<const ProtocolSplit> splits,
                                 const DatasetManifest& manifest,
                                 std::span<const ImageRecord> images, MetricKind metric) {
  if (models.size() != splits.size()) {
    throw ArgumentError("got " + std::to_string(models.size()) + " models for " +
                        std::to_string(splits.size()) + " trials");
  }
  ProtocolResult result;
  for (std::size_t t = 0; t < splits.size(); ++t) {
    result.per_trial.push_back(evaluate_trial(*models[t], splits[t], manifest, images, metric));
  }
  result.curve = average_curves(result.per_trial);
  result.table = rank_table(result.curve);
  return result;
}

namespace {

ScoreDistribution summarize(std::string term, std::vector<double> values, std::size_t bins) {
  ScoreDistribution d;
  d.term = std::move(term);
  d.values = std::move(values);
  if (d.values.empty()) throw ArgumentError("empty pair population");
  bins = std::max<std::size_t>(bins, 1);
  d.min = *std::min_element(d.values.begin(), d.values.end());
  d.max = *std::max_element(d.values.begin(), d.values.end());
  double sum = 0.0;
  for (double v : d.values) sum += v;
  d.mean = sum / static_cast<double>(d.values.size());
  const double width = d.max > d.min ? (d.max - d.min) / static_cast<double>(bins) : 1.0;
  for (std::size_t b = 0; b <= bins; ++b) d.bin_edges.push_back(d.min + width * static_cast<double>(b));
  d.counts.assign(bins, 0);
  for (double v : d.values) {
    auto b = static_cast<std::size_t>((v - d.min) / width);
    ++d.counts[std::min(b, bins - 1)];
  }
  return d;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

ScoreDistributions score_distributions(const HybridWeights<float>& head,
                                       const FeaturePairs<float>& pairs, std::size_t bins) {
  if (pairs.x1.rows == 0 || pairs.x1.rows != pairs.x2.rows) {
    throw ArgumentError("pair population must be non-empty with matching rows");
  }
  std::vector<double> diff, mult;
  ScoreDistributions out;
  for (std::size_t i = 0; i < pairs.x1.rows; ++i) {
    const auto t = hybrid_terms<float>(head, pairs.x1.row(i), pairs.x2.row(i));
    diff.push_back(static_cast<double>(t.diff_term));
    mult.push_back(static_cast<double>(t.mult_term));
    out.hybrid.push_back(static_cast<double>(t.score()));
  }
  out.diff = summarize("dosead", std::move(diff), bins);
  out.mult = summarize("dosem", std::move(mult), bins);
  return out;
}

std::string to_string(OutputFormat format) { return format == OutputFormat::tsv ? "tsv" : "jsonl"; }

OutputFormat parse_output_format(const std::string& text) {
  if (text == "tsv") return OutputFormat::tsv;
  if (text == "jsonl" || text == "json-lines") return OutputFormat::jsonl;
  throw ConfigError("unknown output format '" + text + "'");
}

std::vector<fs::path> emit_results(const CmcCurve& curve, const RankTable& table,
                                   const ScoreDistributions* distributions, const fs::path& dir,
                                   OutputFormat format) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<fs::path> written;
  auto open = [&](const std::string& name) {
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    written.push_back(p);
    return out;
  };
  auto check = [](std::ofstream& out, const fs::path& p) {
    out.flush();
    if (!out) throw IoError("failed writing " + p.string());
  };

  if (format == OutputFormat::tsv) {
    {
      auto out = open("cmc.tsv");
      out << "# protocol\t" << curve.protocol << "\n# trials\t" << curve.trials << "\n# gallery_identities\t"
          << curve.gallery_identities << "\n# gallery_size\t" << curve.gallery_size << "\n# probes\t"
          << curve.probes << "\nrank\trate\n";
      for (std::size_t r = 0; r < curve.rates.size(); ++r) out << r + 1 << '\t' << fixed4(curve.rates[r]) << '\n';
      check(out, written.back());
    }
    {
      auto out = open("rank_table.tsv");
      out << "rank\trate\n";
      for (std::size_t i = 0; i < table.ranks.size(); ++i) out << table.ranks[i] << '\t' << fixed4(table.rates[i]) << '\n';
      check(out, written.back());
    }
    if (distributions != nullptr) {
      auto out = open("scores.tsv");
      out << "term\tbin\tlow\thigh\tcount\n";
      for (const auto* d : {&distributions->diff, &distributions->mult}) {
        for (std::size_t b = 0; b < d->counts.size(); ++b) {
          out << d->term << '\t' << b << '\t' << fixed4(d->bin_edges[b]) << '\t' << fixed4(d->bin_edges[b + 1])
              << '\t' << d->counts[b] << '\n';
        }
      }
      out << "# term\tmin\tmax\tmean\n";
      for (const auto* d : {&distributions->diff, &distributions->mult}) {
        out << "# " << d->term << '\t' << fixed4(d->min) << '\t' << fixed4(d->max) << '\t' << fixed4(d->mean) << '\n';
      }
      check(out, written.back());
    }
    return written;
  }

  // Floats go through fixed4 strings parsed back as numbers so that the JSON
  // text carries exactly four decimals.
  auto num = [](double v) { return nlohmann::json::parse(fixed4(v)); };
  auto out = open("results.jsonl");
  nlohmann::ordered_json meta{{"type", "meta"},
                              {"protocol", curve.protocol},
                              {"trials", curve.trials},
                              {"gallery_identities", curve.gallery_identities},
                              {"gallery_size", curve.gallery_size},
                              {"probes", curve.probes}};
  out << meta.dump() << '\n';
  for (std::size_t r = 0; r < curve.rates.size(); ++r) {
    nlohmann::ordered_json rec{{"type", "cmc"}, {"rank", r + 1}, {"rate", num(curve.rates[r])}};
    out << rec.dump() << '\n';
  }
  for (std::size_t i = 0; i < table.ranks.size(); ++i) {
    nlohmann::ordered_json rec{{"type", "rank_table"}, {"rank", table.ranks[i]}, {"rate", num(table.rates[i])}};
    out << rec.dump() << '\n';
  }
  if (distributions != nullptr) {
    for (const auto* d : {&distributions->diff, &distributions->mult}) {
      for (std::size_t b = 0; b < d->counts.size(); ++b) {
        nlohmann::ordered_json rec{{"type", "histogram"}, {"term", d->term}, {"bin", b},
                                   {"low", num(d->bin_edges[b])}, {"high", num(d->bin_edges[b + 1])},
                                   {"count", d->counts[b]}};
        out << rec.dump() << '\n';
      }
      nlohmann::ordered_json rec{{"type", "summary"}, {"term", d->term}, {"min", num(d->min)},
                                 {"max", num(d->max)}, {"mean", num(d->mean)}};
      out << rec.dump() << '\n';
    }
  }
  check(out, written.back());
  return written;
}

CmcCurve read_cmc_tsv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read " + file.string());
  CmcCurve curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key, value;
      ls >> hash >> key >> value;
      if (key == "protocol") curve.protocol = value;
      else if (key == "trials") curve.trials = std::stoul(value);
      else if (key == "gallery_identities") curve.gallery_identities = std::stoul(value);
      else if (key == "gallery_size") curve.gallery_size = std::stoul(value);
      else if (key == "probes") curve.probes = std::stoul(value);
      continue;
    }
    if (line.rfind("rank", 0) == 0) continue;
    std::size_t rank = 0;
    double rate = 0;
    if (!(ls >> rank >> rate) || rank != curve.rates.size() + 1) {
      throw FormatError(file.string() + ": malformed row '" + line + "'");
    }
    curve.rates.push_back(rate);
  }
  return curve;
}

}  // namespace dhsl
