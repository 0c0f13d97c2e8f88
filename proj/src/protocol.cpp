#include <algorithm>
#include <random>

#include "dhsl/data.hpp"

namespace dhsl {

std::string to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::grid: return "grid";
    case ProtocolKind::viper: return "viper";
    case ProtocolKind::cuhk03: return "cuhk03";
    case ProtocolKind::custom: return "custom";
  }
  return "unknown";
}

ProtocolKind parse_protocol_kind(const std::string& text) {
  for (auto k : {ProtocolKind::grid, ProtocolKind::viper, ProtocolKind::cuhk03, ProtocolKind::custom}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown protocol '" + text + "'");
}

Protocol Protocol::grid() { return {ProtocolKind::grid, 125, 125, 10, true}; }
Protocol Protocol::viper() { return {ProtocolKind::viper, 316, 316, 10, false}; }
Protocol Protocol::cuhk03() { return {ProtocolKind::cuhk03, 1160, 100, 20, false}; }
Protocol Protocol::custom(std::size_t train, std::size_t test, std::size_t trials) {
  return {ProtocolKind::custom, train, test, trials, false};
}

std::vector<ProtocolSplit> make_split(const DatasetManifest& manifest, const Protocol& protocol,
                                      std::uint64_t master_seed) {
  const std::vector<int> ids = manifest.identities();
  const std::size_t required = protocol.train_identities + protocol.test_identities;
  if (protocol.test_identities == 0 || protocol.trials == 0) {
    throw DataError("protocol needs at least one test identity and one trial");
  }
  if (ids.size() < required) {
    throw DataError(to_string(protocol.kind) + " protocol requires " + std::to_string(required) +
                    " identities, dataset has " + std::to_string(ids.size()));
  }
  std::vector<ProtocolSplit> splits;
  splits.reserve(protocol.trials);
  for (std::size_t trial = 0; trial < protocol.trials; ++trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(trial)};
    std::mt19937_64 rng(seq);
    std::vector<int> order = ids;
    std::shuffle(order.begin(), order.end(), rng);
    ProtocolSplit split;
    split.trial = trial;
    split.seed = rng();
    split.distractors_in_gallery = protocol.distractors_in_gallery;
    const auto train_end = order.begin() + static_cast<std::ptrdiff_t>(protocol.train_identities);
    split.train_ids.assign(order.begin(), train_end);
    split.test_ids.assign(train_end, train_end + static_cast<std::ptrdiff_t>(protocol.test_identities));
    std::sort(split.train_ids.begin(), split.train_ids.end());
    std::sort(split.test_ids.begin(), split.test_ids.end());
    splits.push_back(std::move(split));
  }
  return splits;
}

}  // namespace dhsl
