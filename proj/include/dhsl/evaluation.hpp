#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dhsl/data.hpp"
#include "dhsl/model.hpp"

namespace dhsl {

struct CmcCurve {
  /// rates[r - 1] is the fraction of probes whose match is within the top r.
  std::vector<double> rates;
  std::size_t trials = 1;
  std::string protocol;
  std::size_t gallery_identities = 0;
  std::size_t gallery_size = 0;
  std::size_t probes = 0;

  /// Rate at rank r (1-based); ranks past the gallery size read the last rate.
  double at(std::size_t rank) const;
};

inline const std::vector<std::size_t> kDefaultRanks{1, 10, 20, 30};

struct RankTable {
  std::vector<std::size_t> ranks;
  std::vector<double> rates;
};

RankTable rank_table(const CmcCurve& curve, std::span<const std::size_t> ranks = kDefaultRanks);

/// Ranks each probe row of a probes x gallery score matrix. The rank of the
/// true match is 1 + the number of gallery entries scoring strictly better,
/// or equally with a lower gallery index.
std::vector<std::size_t> match_ranks(std::span<const double> scores, std::size_t gallery,
                                     std::span<const std::size_t> truth, bool higher_is_better);

CmcCurve cmc_from_ranks(std::span<const std::size_t> ranks, std::size_t gallery);

CmcCurve cmc_from_scores(std::span<const double> scores, std::size_t gallery,
                         std::span<const std::size_t> truth, bool higher_is_better);

/// Scores feature pairs under one metric kind.
class MetricScorer {
 public:
  /// Learned kinds read `head`; mahalanobis reads `matrix`.
  MetricScorer(MetricKind kind, const HybridWeights<float>* head = nullptr,
               const FeatureMatrix<float>* matrix = nullptr);

  MetricKind kind() const noexcept { return kind_; }
  bool higher_is_better() const { return higher_is_more_similar(kind_); }
  double score(std::span<const float> x1, std::span<const float> x2) const;

  /// probes x gallery score matrix, row-major.
  std::vector<double> score_matrix(const FeatureMatrix<float>& probes,
                                   const FeatureMatrix<float>& gallery) const;

 private:
  MetricKind kind_;
  const HybridWeights<float>* head_;
  const FeatureMatrix<float>* matrix_;
};

/// Single-shot probe / gallery assignment for a set of test identities. For
/// each identity the probe camera is its lowest camera and the gallery image
/// is the first manifest entry in its next camera.
struct GalleryPlan {
  std::vector<std::size_t> probe_entries;
  std::vector<std::size_t> gallery_entries;
  std::vector<std::size_t> probe_truth;  // gallery position of each probe's match
  std::size_t gallery_identities = 0;
};

/// Throws ProtocolError when a test identity cannot be placed in the gallery.
GalleryPlan plan_gallery(const DatasetManifest& manifest, std::span<const int> test_ids,
                         bool with_distractors);

/// Infer-mode features for the given entries, one row each.
FeatureMatrix<float> extract_features(Model<float>& model, std::span<const ImageRecord> images,
                                      std::span<const std::size_t> entries, std::size_t chunk = 32);

CmcCurve evaluate_features(const FeatureMatrix<float>& probes, const FeatureMatrix<float>& gallery,
                           std::span<const std::size_t> truth, const MetricScorer& scorer);

CmcCurve evaluate_trial(Model<float>& model, const ProtocolSplit& split,
                        const DatasetManifest& manifest, std::span<const ImageRecord> images,
                        MetricKind metric);

/// Element-wise mean of curves of equal length. Throws ArgumentError on
/// mismatched lengths or an empty input.
CmcCurve average_curves(std::span<const CmcCurve> curves);

struct ProtocolResult {
  CmcCurve curve;
  RankTable table;
  std::vector<CmcCurve> per_trial;
};

/// One model per split. Throws ArgumentError when the counts differ.
ProtocolResult evaluate_protocol(std::span<Model<float>* const> models,
                                 std::span<const ProtocolSplit> splits,
                                 const DatasetManifest& manifest,
                                 std::span<const ImageRecord> images, MetricKind metric);

struct ScoreDistribution {
  std::string term;
  std::vector<double> values;
  double min = 0;
  double max = 0;
  double mean = 0;
  std::vector<double> bin_edges;     // bins + 1 edges
  std::vector<std::size_t> counts;   // bins
};

struct ScoreDistributions {
  ScoreDistribution diff;  // w_d . |x1 - x2| per pair
  ScoreDistribution mult;  // w_m . (x1 .* x2) per pair
  std::vector<double> hybrid;
};

/// Sub-score histograms over a pair population (rows of `pairs.x1` / `x2`).
ScoreDistributions score_distributions(const HybridWeights<float>& head,
                                       const FeaturePairs<float>& pairs, std::size_t bins = 20);

enum class OutputFormat { tsv, jsonl };

std::string to_string(OutputFormat format);
OutputFormat parse_output_format(const std::string& text);

/// Writes cmc, rank table and (optionally) sub-score histograms into `dir`.
/// TSV: cmc.tsv, rank_table.tsv, scores.tsv. JSON lines: results.jsonl.
/// Returns the written paths.
std::vector<std::filesystem::path> emit_results(const CmcCurve& curve, const RankTable& table,
                                                const ScoreDistributions* distributions,
                                                const std::filesystem::path& dir,
                                                OutputFormat format);

/// Reads a cmc.tsv written by emit_results.
CmcCurve read_cmc_tsv(const std::filesystem::path& file);

}  // namespace dhsl
