#include <gtest/gtest.h>

#include "checks.hpp"

using namespace dhsl;

TEST(GradientCheck, EveryLayerWithinTolerance) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : checks::layer_gradient_checks(seed)) {
      EXPECT_LT(r.max_rel_error, 1e-4) << r.name << " seed " << seed;
    }
  }
}

TEST(GradientCheck, TinyNetworkEndToEnd) {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = checks::end_to_end_gradient_check(seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << r.name << " seed " << seed;
  }
}
