// dhsl: synth / train / eval / params.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"

#include "dhsl/config.hpp"
#include "dhsl/parallel.hpp"

namespace fs = std::filesystem;
using namespace dhsl;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kDivergence = 4, kIo = 5 };

struct FlagSpec {
  const char* flag;
  const char* key;
  const char* help;
};

// Flags shared by train and eval, mapped onto RunConfig keys.
const FlagSpec kRunFlags[] = {
    {"--data", "data", "dataset directory or manifest file"},
    {"--out", "out", "output directory"},
    {"--seed", "seed", "master seed"},
    {"--workers", "workers", "worker threads (1 keeps every run bit-reproducible)"},
    {"--protocol", "protocol", "grid | viper | cuhk03 | custom"},
    {"--train-ids", "train_ids", "custom protocol: training identities"},
    {"--test-ids", "test_ids", "custom protocol: test identities"},
    {"--trials", "trials", "custom protocol: trial count"},
    {"--max-trials", "max_trials", "only run the first N trials (0 = all)"},
    {"--metric", "metric", "hybrid | euclidean | cosine | diff-only | mult-only"},
    {"--channel-mult", "channel_mult", "channel width multiplier (2 = thicker model)"},
};

const FlagSpec kTrainFlags[] = {
    {"--alpha", "alpha", "L2 weight on the similarity head"},
    {"--base-lr", "base_lr", "initial learning rate"},
    {"--batch", "batch", "pairs per mini-batch"},
    {"--pos-per-batch", "pos_per_batch", "positive pairs per mini-batch"},
    {"--momentum", "momentum", "SGD momentum"},
    {"--min-lr", "min_lr", "learning-rate floor"},
    {"--lr-decay", "lr_decay", "factor applied on a loss plateau"},
    {"--patience", "patience", "plateau patience in epochs"},
    {"--max-epochs", "max_epochs", "epoch budget"},
    {"--max-steps", "max_steps", "step budget (0 = none)"},
    {"--steps-per-epoch", "steps_per_epoch", "steps per epoch (0 = derived from the data)"},
    {"--augment", "augment", "none | mirror | mirror+rotate"},
    {"--checkpoint-every", "checkpoint_every", "steps between checkpoints"},
    {"--mining-pool", "mining_pool", "negatives scored per mining round"},
    {"--mining-keep", "mining_keep", "negatives kept per mining round"},
};

const FlagSpec kEvalFlags[] = {
    {"--checkpoints", "checkpoints", "trained run directory (defaults to --out)"},
    {"--format", "format", "tsv | jsonl"},
    {"--bins", "bins", "histogram bins for sub-score distributions"},
};

const FlagSpec kSynthFlags[] = {
    {"--out", "out", "dataset directory to create"},
    {"--seed", "seed", "generator seed"},
    {"--identities", "identities", "number of identities"},
    {"--per-id", "per_id", "images per identity and camera"},
    {"--cameras", "cameras", "number of cameras"},
    {"--distractors", "distractors", "number of background images"},
    {"--difficulty", "difficulty", "nuisance strength, 0 renders identical views"},
};

/// Collects flag values as strings so they can be applied over a config file.
class Overrides {
 public:
  void bind(CLI::App* app, std::span<const FlagSpec> specs) {
    for (const auto& s : specs) {
      auto& slot = values_[s.key];
      options_.emplace_back(s.key, app->add_option(s.flag, slot, s.help));
    }
  }
  void bind_flag(CLI::App* app, const char* flag, const char* key, const char* help) {
    flags_.emplace_back(key, app->add_flag(flag)->description(help));
  }
  void apply(RunConfig& config) const {
    for (const auto& [key, opt] : options_) {
      if (opt->count() > 0) config.apply(key, values_.at(key));
    }
    for (const auto& [key, opt] : flags_) {
      if (opt->count() > 0) config.apply(key, "true");
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::pair<std::string, CLI::Option*>> options_;
  std::vector<std::pair<std::string, CLI::Option*>> flags_;
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_file;
  Overrides overrides;

  RunConfig resolve() const {
    RunConfig config;
    if (!config_file.empty()) config = load_run_config(config_file);
    overrides.apply(config);
    config.train.validate();
    set_num_workers(std::max<std::size_t>(config.workers, 1));
    return config;
  }
};

bool is_nonempty_dir(const fs::path& p) {
  return fs::is_directory(p) && fs::directory_iterator(p) != fs::directory_iterator();
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

std::string trial_name(std::size_t trial) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "trial_%02zu", trial);
  return buf;
}

std::vector<ProtocolSplit> resolve_splits(const RunConfig& config, const DatasetManifest& manifest) {
  auto splits = make_split(manifest, config.protocol_spec(), config.train.seed);
  if (config.max_trials != 0 && config.max_trials < splits.size()) splits.resize(config.max_trials);
  return splits;
}

int cmd_synth(const RunConfig& config, bool force) {
  if (is_nonempty_dir(config.out) && !force) {
    throw IoError(config.out.string() + " exists and is not empty (use --force to overwrite)");
  }
  const auto dataset = generate_synthetic(config.synth_spec());
  write_dataset(dataset, config.out);
  write_run_config(config, config.out / "config.txt");
  std::cout << "wrote " << dataset.images.size() << " images (" << dataset.manifest.identities().size()
            << " identities, " << config.cameras << " cameras, " << dataset.manifest.distractor_count()
            << " distractors) to " << config.out.string() << "\n";
  return kOk;
}

void truncate_log(const fs::path& log, std::size_t last_step) {
  if (!fs::exists(log)) return;
  std::ifstream in(log);
  std::string header, line, kept;
  std::getline(in, header);
  kept = header + "\n";
  while (std::getline(in, line)) {
    if (std::stoull(line.substr(0, line.find('\t'))) <= last_step) kept += line + "\n";
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  out << kept;
}

int cmd_train(RunConfig config, bool force) {
  config.train.head_mode = config.head_mode();
  if (config.data.empty()) throw ConfigError("--data is required");
  const auto manifest = open_dataset(config.data);
  const auto images = load_images(manifest);
  const auto splits = resolve_splits(config, manifest);
  make_dir(config.out);
  write_run_config(config, config.out / "config.txt");

  for (const auto& split : splits) {
    const fs::path dir = config.out / trial_name(split.trial);
    if (force) fs::remove_all(dir);
    make_dir(dir);
    const fs::path ck_path = dir / "checkpoint.dhsl";
    const fs::path log_path = dir / "train_log.tsv";

    TrainConfig tc = config.train;
    tc.seed = split.seed;
    const auto train = subset(manifest, split.train_ids);
    const auto train_images = train.gather<ImageRecord>(images);

    Model<float> model(StackConfig::with_channel_multiplier(tc.channel_multiplier));
    init_params(model, split.seed);
    model.apply_head_mode(tc.head_mode);
    Trainer trainer(model, tc, train.manifest, train_images);

    if (fs::exists(ck_path)) {
      auto ck = load_checkpoint(ck_path);
      if (ck.config.to_kv() != tc.to_kv()) {
        throw ConfigError(ck_path.string() + " was written with a different config (use --force to restart)");
      }
      model = std::move(ck.model);
      if (ck.trainer) trainer.restore(std::move(*ck.trainer));
      if (trainer.state().finished) {
        std::cout << trial_name(split.trial) << ": already trained, skipping\n";
        continue;
      }
      truncate_log(log_path, trainer.state().step);
      std::cout << trial_name(split.trial) << ": resuming at step " << trainer.state().step << "\n";
    } else {
      fs::remove(log_path);
    }

    TrainingLog log(log_path);
    trainer.on_step([&](const StepRecord& r) {
      log.append(r);
      if (config.checkpoint_every != 0 && r.step % config.checkpoint_every == 0) {
        const auto snap = trainer.snapshot();
        save_checkpoint(model, tc, &snap, ck_path);
        std::cout << trial_name(split.trial) << " step " << r.step << " epoch " << r.epoch << " lr " << r.lr
                  << " loss " << r.loss << "\n"
                  << std::flush;
      }
    });
    trainer.run();
    const auto snap = trainer.snapshot();
    save_checkpoint(model, tc, &snap, ck_path);
    std::cout << trial_name(split.trial) << ": done after " << snap.step << " steps\n";
  }
  return kOk;
}

int cmd_eval(RunConfig config) {
  if (config.data.empty()) throw ConfigError("--data is required");
  if (config.metric == MetricKind::mahalanobis) {
    throw ConfigError("mahalanobis needs a learned matrix, which this model does not have");
  }
  const fs::path run_dir = config.checkpoints.empty() ? config.out : config.checkpoints;
  const auto manifest = open_dataset(config.data);
  const auto images = load_images(manifest);
  const auto splits = resolve_splits(config, manifest);

  std::vector<std::unique_ptr<Model<float>>> models;
  for (const auto& split : splits) {
    const fs::path ck_path = run_dir / trial_name(split.trial) / "checkpoint.dhsl";
    if (!fs::exists(ck_path)) throw IoError("missing checkpoint " + ck_path.string());
    auto ck = load_checkpoint(ck_path);
    if (ck.config.channel_multiplier != config.train.channel_multiplier) {
      throw ConfigError(ck_path.string() + " has feature dimension " + std::to_string(ck.model.feature_dim()) +
                        ", the config asks for channel multiplier " + std::to_string(config.train.channel_multiplier));
    }
    models.push_back(std::make_unique<Model<float>>(std::move(ck.model)));
  }
  std::vector<Model<float>*> ptrs;
  for (auto& m : models) ptrs.push_back(m.get());
  ProtocolResult result = evaluate_protocol(ptrs, splits, manifest, images, config.metric);
  result.curve.protocol = to_string(config.protocol);

  // Sub-score population: each probe with its match and with the next gallery identity.
  FeaturePairs<float> population;
  std::vector<float> x1, x2;
  for (std::size_t t = 0; t < splits.size(); ++t) {
    const auto plan = plan_gallery(manifest, splits[t].test_ids, splits[t].distractors_in_gallery);
    const auto probes = extract_features(*ptrs[t], images, plan.probe_entries);
    const auto gallery = extract_features(*ptrs[t], images, plan.gallery_entries);
    for (std::size_t p = 0; p < probes.rows; ++p) {
      const std::size_t match = plan.probe_truth[p];
      for (std::size_t g : {match, (match + 1) % plan.gallery_identities}) {
        x1.insert(x1.end(), probes.row(p).begin(), probes.row(p).end());
        x2.insert(x2.end(), gallery.row(g).begin(), gallery.row(g).end());
      }
    }
  }
  const std::size_t d = ptrs.front()->feature_dim();
  const std::size_t pairs = x1.size() / d;
  population.x1 = FeatureMatrix<float>(pairs, d, std::move(x1));
  population.x2 = FeatureMatrix<float>(pairs, d, std::move(x2));
  const auto distributions = score_distributions(ptrs.front()->head(), population, config.bins);

  const fs::path out_dir = config.out / ("eval_" + to_string(config.metric));
  emit_results(result.curve, result.table, &distributions, out_dir, config.format);
  write_run_config(config, out_dir / "config.txt");
  std::cout << "metric " << to_string(config.metric) << ", " << splits.size() << " trials, gallery "
            << result.curve.gallery_identities << " identities / " << result.curve.gallery_size << " images\n";
  for (std::size_t i = 0; i < result.table.ranks.size(); ++i) {
    std::printf("rank %zu: %.2f%%\n", result.table.ranks[i], 100.0 * result.table.rates[i]);
  }
  return kOk;
}

int cmd_params(double multiplier) {
  const StackConfig config = StackConfig::with_channel_multiplier(multiplier);
  LayerStack<float> stack(config);
  std::printf("%-6s %-16s %10s %8s\n", "layer", "output", "weights", "biases");
  std::map<std::string, LayerParamCount> counts;
  for (const auto& c : stack.count_params()) counts[c.layer] = c;
  std::size_t conv_w = 0, conv_b = 0;
  for (const auto& [name, s] : stack.planned_shapes(1)) {
    const LayerParamCount c = counts.count(name) ? counts[name] : LayerParamCount{name, 0, 0};
    const std::string out = std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
    std::printf("%-6s %-16s %10zu %8zu\n", name.c_str(), out.c_str(), c.weights, c.biases);
    if (name[0] == 'C') {
      conv_w += c.weights;
      conv_b += c.biases;
    }
  }
  const std::size_t d = config.feature_dim();
  std::printf("conv total: %zu weights + %zu biases\n", conv_w, conv_b);
  std::printf("feature dimension d = %zu\n", d);
  std::printf("metric parameters:\n");
  for (auto kind : {MetricKind::mahalanobis, MetricKind::euclidean, MetricKind::cosine, MetricKind::hybrid,
                    MetricKind::diff_only, MetricKind::mult_only}) {
    std::printf("  %-12s %zu\n", to_string(kind).c_str(), count_metric_params(kind, d));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese hybrid-similarity person re-identification"};
  app.require_subcommand(1);

  Subcommand synth, train, eval;
  bool force = false;
  double params_mult = 1.0;

  synth.app = app.add_subcommand("synth", "render a synthetic identity dataset");
  synth.app->add_option("--config", synth.config_file, "key=value config file");
  synth.overrides.bind(synth.app, kSynthFlags);
  synth.app->add_flag("--force", force, "overwrite a non-empty output directory");

  train.app = app.add_subcommand("train", "train one model per protocol trial");
  train.app->add_option("--config", train.config_file, "key=value config file");
  train.overrides.bind(train.app, kRunFlags);
  train.overrides.bind(train.app, kTrainFlags);
  train.overrides.bind_flag(train.app, "--hard-mining", "hard_mining", "enable hard-negative mining");
  train.app->add_flag("--force", force, "discard existing checkpoints instead of resuming");

  eval.app = app.add_subcommand("eval", "evaluate trained trials under a metric");
  eval.app->add_option("--config", eval.config_file, "key=value config file (e.g. the run's config.txt)");
  eval.overrides.bind(eval.app, kRunFlags);
  eval.overrides.bind(eval.app, kEvalFlags);

  auto* params = app.add_subcommand("params", "print parameter counts");
  params->add_option("--channel-mult", params_mult, "channel width multiplier");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (synth.app->parsed()) return cmd_synth(synth.resolve(), force);
    if (train.app->parsed()) return cmd_train(train.resolve(), force);
    if (eval.app->parsed()) return cmd_eval(eval.resolve());
    if (params->parsed()) return cmd_params(params_mult);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged in layer " << e.layer() << ": " << e.what() << "\n";
    return kDivergence;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const ProtocolError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const FormatError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}
