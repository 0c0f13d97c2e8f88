#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dhsl::checks {

struct GradReport {
  std::string name;
  double max_rel_error = 0;
};

/// Finite-difference checks, in double precision, of every layer and head
/// operation against its analytic backward pass.
std::vector<GradReport> layer_gradient_checks(std::uint64_t seed);

/// Finite differences of the full pair objective on a tiny network (d <= 16)
/// with respect to every learnable parameter.
GradReport end_to_end_gradient_check(std::uint64_t seed);

/// Largest deviation from the loop oracles over `instances` random cases.
double conv_oracle_error(std::size_t instances, std::uint64_t seed);
double maxpool_oracle_error(std::size_t instances, std::uint64_t seed);
double avgpool_oracle_error(std::size_t instances, std::uint64_t seed);

/// Counts instances where top_k_indices differs from a full stable sort.
std::size_t top_k_mismatches(std::size_t instances, std::uint64_t seed);

/// Random score matrices whose CMC is not non-decreasing, leaves [0, 1], or
/// does not reach 1 at the full gallery.
std::size_t cmc_shape_violations(std::size_t instances, std::uint64_t seed);

/// Random instances where scoring with a * s + b (a > 0) changes a match rank.
std::size_t affine_invariance_violations(std::size_t instances, std::uint64_t seed);

/// Random instances where negated scores ranked in the flipped direction
/// change a match rank.
std::size_t negation_violations(std::size_t instances, std::uint64_t seed);

/// Random instances where appending gallery columns raises some rate.
std::size_t distractor_growth_violations(std::size_t instances, std::uint64_t seed);

/// Ranks at which an untrained reduced-width model on a synthetic set with
/// background images scores higher with the distractors than without, summed
/// over the hybrid and euclidean metrics.
std::size_t model_distractor_violations(std::uint64_t seed);

struct ChanceReport {
  std::size_t hits = 0;
  std::size_t probes = 0;
  double expected = 0;
  double sigma = 0;

  bool within_three_sigma() const;
};

/// Rank-1 hits of freshly initialised models scoring i.i.d. noise images
/// under the hybrid metric, one gallery of `gallery` identities per trial.
ChanceReport untrained_chance_level(std::size_t gallery, std::size_t trials, std::uint64_t seed);

}  // namespace dhsl::checks
