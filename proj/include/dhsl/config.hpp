#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "dhsl/data.hpp"
#include "dhsl/evaluation.hpp"
#include "dhsl/trainer.hpp"

namespace dhsl {

/// Everything a subcommand needs, serializable as flat key=value text.
struct RunConfig {
  TrainConfig train;
  std::filesystem::path data;
  std::filesystem::path out = "run";
  std::filesystem::path checkpoints;  // eval: trained run directory, defaults to `out`
  ProtocolKind protocol = ProtocolKind::viper;
  std::size_t train_ids = 20;  // custom protocol only
  std::size_t test_ids = 20;   // custom protocol only
  std::size_t trials = 3;      // custom protocol only
  /// Trials to train / evaluate, 0 means all of the protocol's trials.
  std::size_t max_trials = 0;
  MetricKind metric = MetricKind::hybrid;
  std::size_t workers = 1;
  OutputFormat format = OutputFormat::tsv;
  std::size_t bins = 20;
  std::size_t checkpoint_every = 100;

  // synth
  std::size_t identities = 20;
  std::size_t per_id = 2;
  std::size_t cameras = 2;
  std::size_t distractors = 0;
  double difficulty = 0.2;

  Protocol protocol_spec() const;
  SynthConfig synth_spec() const;
  /// Head mode implied by `metric`; throws ConfigError for untrained metrics.
  HeadMode head_mode() const;

  std::map<std::string, std::string> to_kv() const;
  std::string to_text() const;
  /// Throws ConfigError on unknown keys or malformed values.
  void apply(const std::string& key, const std::string& value);
};

/// Parses key=value lines; blank lines and lines starting with '#' are skipped.
RunConfig parse_run_config(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& file, RunConfig base = {});
void write_run_config(const RunConfig& config, const std::filesystem::path& file);

}  // namespace dhsl
