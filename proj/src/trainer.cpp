#include "dhsl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace dhsl {

namespace fs = std::filesystem;

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size()) {
    throw ConfigError("key '" + key + "': '" + value + "' is not a number");
  }
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("key '" + key + "': '" + value + "' is not a non-negative integer");
  }
  try {
    return std::stoull(value);
  } catch (const std::out_of_range&) {
    throw ConfigError("key '" + key + "': '" + value + "' is out of range");
  }
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + value + "'");
}

std::string layer_of(const std::string& param_name) {
  return param_name.substr(0, param_name.find('.'));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (!(min_lr > 0.0) || !(min_lr <= base_lr)) {
    throw ConfigError("learning rates must satisfy 0 < min_lr <= base_lr");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (pos_per_batch > batch_size) throw ConfigError("pos_per_batch exceeds batch size");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) {
    throw ConfigError("lr_decay_factor must lie in (0, 1]");
  }
  if (plateau_patience == 0) throw ConfigError("plateau_patience must be positive");
  if (!(channel_multiplier > 0.0)) throw ConfigError("channel multiplier must be positive");
  if (!(cnn_weight_decay >= 0.0)) throw ConfigError("cnn_weight_decay must be >= 0");
  if (mining_pool != 0 && mining_keep > mining_pool) {
    throw ConfigError("mining_keep exceeds mining_pool");
  }
}

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {
      {"alpha", format_double(alpha)},
      {"batch", std::to_string(batch_size)},
      {"pos_per_batch", std::to_string(pos_per_batch)},
      {"momentum", format_double(momentum)},
      {"base_lr", format_double(base_lr)},
      {"lr_decay", format_double(lr_decay_factor)},
      {"min_lr", format_double(min_lr)},
      {"patience", std::to_string(plateau_patience)},
      {"max_epochs", std::to_string(max_epochs)},
      {"steps_per_epoch", std::to_string(steps_per_epoch)},
      {"max_steps", std::to_string(max_steps)},
      {"hard_mining", hard_negative_mining ? "true" : "false"},
      {"mining_pool", std::to_string(mining_pool)},
      {"mining_keep", std::to_string(mining_keep)},
      {"seed", std::to_string(seed)},
      {"channel_mult", format_double(channel_multiplier)},
      {"cnn_weight_decay", format_double(cnn_weight_decay)},
      {"head", to_string(head_mode)},
      {"augment", to_string(augmentation)},
  };
}

bool TrainConfig::apply(const std::string& key, const std::string& value) {
  if (key == "alpha") alpha = parse_double(key, value);
  else if (key == "batch") batch_size = parse_uint(key, value);
  else if (key == "pos_per_batch") pos_per_batch = parse_uint(key, value);
  else if (key == "momentum") momentum = parse_double(key, value);
  else if (key == "base_lr") base_lr = parse_double(key, value);
  else if (key == "lr_decay") lr_decay_factor = parse_double(key, value);
  else if (key == "min_lr") min_lr = parse_double(key, value);
  else if (key == "patience") plateau_patience = parse_uint(key, value);
  else if (key == "max_epochs") max_epochs = parse_uint(key, value);
  else if (key == "steps_per_epoch") steps_per_epoch = parse_uint(key, value);
  else if (key == "max_steps") max_steps = parse_uint(key, value);
  else if (key == "hard_mining") hard_negative_mining = parse_flag(key, value);
  else if (key == "mining_pool") mining_pool = parse_uint(key, value);
  else if (key == "mining_keep") mining_keep = parse_uint(key, value);
  else if (key == "seed") seed = parse_uint(key, value);
  else if (key == "channel_mult") channel_multiplier = parse_double(key, value);
  else if (key == "cnn_weight_decay") cnn_weight_decay = parse_double(key, value);
  else if (key == "head") head_mode = parse_head_mode(value);
  else if (key == "augment") augmentation = parse_augment_policy(value);
  else return false;
  return true;
}

// ---------------------------------------------------------------------------
// Pair sampling

std::vector<int> PairBatch::labels() const {
  std::vector<int> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.label);
  return out;
}

PairSampler::PairSampler(const DatasetManifest& manifest) : manifest_(&manifest) {
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (!e.is_distractor) by_identity_[e.identity].push_back(i);
  }
  for (const auto& [id, idx] : by_identity_) {
    identities_.push_back(id);
    std::set<int> cams;
    for (std::size_t i : idx) cams.insert(manifest.entries[i].camera);
    if (cams.size() < 2) continue;
    positive_ids_.push_back(id);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      for (std::size_t b = a + 1; b < idx.size(); ++b) {
        if (manifest.entries[idx[a]].camera != manifest.entries[idx[b]].camera) ++cross_pairs_;
      }
    }
  }
}

PairIndex PairSampler::positive(std::mt19937_64& rng) const {
  if (positive_ids_.empty()) {
    throw DataError("no identity has images in two cameras, cannot form positive pairs");
  }
  const int id = positive_ids_[std::uniform_int_distribution<std::size_t>(0, positive_ids_.size() - 1)(rng)];
  const auto& idx = by_identity_.at(id);
  const std::size_t a = idx[std::uniform_int_distribution<std::size_t>(0, idx.size() - 1)(rng)];
  const int cam = manifest_->entries[a].camera;
  std::vector<std::size_t> other;
  for (std::size_t i : idx) {
    if (manifest_->entries[i].camera != cam) other.push_back(i);
  }
  const std::size_t b = other[std::uniform_int_distribution<std::size_t>(0, other.size() - 1)(rng)];
  return {a, b, +1};
}

PairIndex PairSampler::negative(std::mt19937_64& rng) const {
  if (identities_.size() < 2) throw DataError("fewer than two identities, cannot form negative pairs");
  std::uniform_int_distribution<std::size_t> pick_id(0, identities_.size() - 1);
  const std::size_t i = pick_id(rng);
  std::size_t j = pick_id(rng);
  while (j == i) j = pick_id(rng);
  const auto& a = by_identity_.at(identities_[i]);
  const auto& b = by_identity_.at(identities_[j]);
  return {a[std::uniform_int_distribution<std::size_t>(0, a.size() - 1)(rng)],
          b[std::uniform_int_distribution<std::size_t>(0, b.size() - 1)(rng)], -1};
}

PairBatch sample_batch(const PairSampler& sampler, const TrainConfig& config, std::mt19937_64& rng,
                       std::span<const PairIndex> mined) {
  if (config.pos_per_batch > config.batch_size) throw ConfigError("pos_per_batch exceeds batch size");
  PairBatch batch;
  batch.pairs.reserve(config.batch_size);
  for (std::size_t i = 0; i < config.pos_per_batch; ++i) batch.pairs.push_back(sampler.positive(rng));
  for (std::size_t i = config.pos_per_batch; i < config.batch_size; ++i) {
    if (mined.empty()) {
      batch.pairs.push_back(sampler.negative(rng));
    } else {
      batch.pairs.push_back(mined[std::uniform_int_distribution<std::size_t>(0, mined.size() - 1)(rng)]);
    }
  }
  return batch;
}

template <typename T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> materialize(const PairBatch& batch,
                                                        std::span<const ImageRecord> images,
                                                        AugmentPolicy policy, std::mt19937_64& rng) {
  if (batch.pairs.empty()) throw ArgumentError("cannot materialize an empty batch");
  std::vector<ImageRecord> left, right;
  left.reserve(batch.pairs.size());
  right.reserve(batch.pairs.size());
  for (const auto& p : batch.pairs) {
    if (p.first >= images.size() || p.second >= images.size()) {
      throw ArgumentError("pair refers to an image outside the loaded set");
    }
    left.push_back(augment(images[p.first], policy, rng));
    right.push_back(augment(images[p.second], policy, rng));
  }
  std::vector<const ImageRecord*> lp, rp;
  for (std::size_t i = 0; i < left.size(); ++i) {
    lp.push_back(&left[i]);
    rp.push_back(&right[i]);
  }
  return {to_tensor<T>(lp), to_tensor<T>(rp)};
}

// ---------------------------------------------------------------------------
// Optimization

template <typename T>
T train_step(Model<T>& model, MomentumState<T>& state, const BasicTensor4<T>& first,
             const BasicTensor4<T>& second, std::span<const int> labels, double lr,
             const TrainConfig& config) {
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be >= 0");
  const std::size_t n = model.num_learnable();
  if (state.velocity.empty()) state.velocity.assign(n, T(0));
  if (state.velocity.size() != n) throw ShapeError("momentum state does not match the model");

  model.zero_grad();
  const auto result = pair_objective(model, first, second, labels, config.alpha, config.head_mode,
                                     Mode::train, true);
  if (!std::isfinite(static_cast<double>(result.loss))) {
    throw DivergenceError("training diverged: non-finite loss", "loss");
  }
  auto refs = model.params();
  for (const auto& p : refs) {
    if (!all_finite<T>(p.value)) {
      throw DivergenceError("training diverged: non-finite value in " + p.name, layer_of(p.name));
    }
  }
  // Non-finite gradients flow toward the input, so the layer nearest the
  // loss is where they start.
  for (auto it = refs.rbegin(); it != refs.rend(); ++it) {
    if (!all_finite<T>(it->grad)) {
      throw DivergenceError("training diverged: non-finite gradient in " + it->name, layer_of(it->name));
    }
  }

  const T mu = static_cast<T>(config.momentum);
  const T step = static_cast<T>(lr);
  const T decay = static_cast<T>(config.cnn_weight_decay);
  std::size_t offset = 0;
  for (auto& p : refs) {
    const bool decayed = decay != T(0) && ends_with(p.name, ".filters");
    T* v = state.velocity.data() + offset;
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = decayed ? p.grad[j] + decay * p.value[j] : p.grad[j];
      v[j] = mu * v[j] - step * g;
      p.value[j] += v[j];
    }
    offset += p.value.size();
  }
  model.apply_head_mode(config.head_mode);
  return result.loss;
}

double lr_schedule_step(std::span<const double> epoch_losses, double lr, const TrainConfig& config) {
  const std::size_t n = epoch_losses.size();
  if (n == 0 || n < config.plateau_patience) return lr;
  double best = epoch_losses[0];
  std::size_t last_improvement = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (epoch_losses[i] < best - 1e-3 * std::abs(best)) last_improvement = i;
    best = std::min(best, epoch_losses[i]);
  }
  if (n - last_improvement < config.plateau_patience) return lr;
  return std::max(lr * config.lr_decay_factor, config.min_lr);
}

// ---------------------------------------------------------------------------
// Hard negatives

std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k) {
  k = std::min(k, scores.size());
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

std::vector<double> score_pairs(Model<float>& model, std::span<const PairIndex> pairs,
                                std::span<const ImageRecord> images) {
  std::vector<std::size_t> needed;
  for (const auto& p : pairs) {
    needed.push_back(p.first);
    needed.push_back(p.second);
  }
  std::sort(needed.begin(), needed.end());
  needed.erase(std::unique(needed.begin(), needed.end()), needed.end());

  SiameseExtractor<float> extractor(model.stack());
  std::map<std::size_t, std::vector<float>> features;
  constexpr std::size_t kChunk = 32;
  for (std::size_t begin = 0; begin < needed.size(); begin += kChunk) {
    const std::size_t end = std::min(needed.size(), begin + kChunk);
    std::vector<const ImageRecord*> recs;
    for (std::size_t i = begin; i < end; ++i) recs.push_back(&images[needed[i]]);
    const auto f = extractor.extract_single(to_tensor<float>(recs), Mode::infer);
    for (std::size_t i = begin; i < end; ++i) {
      const auto row = f.row(i - begin);
      features[needed[i]].assign(row.begin(), row.end());
    }
  }
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    scores.push_back(static_cast<double>(
        hybrid_terms<float>(model.head(), features.at(p.first), features.at(p.second)).score()));
  }
  return scores;
}

std::vector<PairIndex> mine_hard_negatives(Model<float>& model, const PairSampler& sampler,
                                           std::span<const ImageRecord> images,
                                           std::size_t pool_size, std::size_t keep,
                                           std::mt19937_64& rng) {
  if (pool_size == 0) throw DataError("hard-negative mining needs a non-empty pool");
  if (keep > pool_size) throw PreconditionError("mining keep-count exceeds the pool size");
  std::vector<PairIndex> pool;
  pool.reserve(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) pool.push_back(sampler.negative(rng));
  const auto scores = score_pairs(model, pool, images);
  std::vector<PairIndex> kept;
  for (std::size_t i : top_k_indices(scores, keep)) kept.push_back(pool[i]);
  return kept;
}

// ---------------------------------------------------------------------------
// Trainer

std::string TrainerState::to_text() const {
  std::ostringstream out;
  out << "step=" << step << '\n'
      << "epoch=" << epoch << '\n'
      << "lr=" << hex_double(lr) << '\n'
      << "history=";
  for (std::size_t i = 0; i < epoch_history.size(); ++i) {
    out << (i ? "," : "") << hex_double(epoch_history[i]);
  }
  out << '\n'
      << "epoch_loss_sum=" << hex_double(epoch_loss_sum) << '\n'
      << "epoch_steps=" << epoch_steps << '\n'
      << "finished=" << (finished ? 1 : 0) << '\n'
      << "mined=";
  for (std::size_t i = 0; i < mined.size(); ++i) {
    out << (i ? "," : "") << mined[i].first << ':' << mined[i].second << ':' << mined[i].label;
  }
  out << '\n' << "rng=" << rng_state << '\n';
  return out.str();
}

TrainerState TrainerState::from_text(const std::string& text) {
  TrainerState s;
  std::istringstream in(text);
  std::string line;
  auto items = [](const std::string& v) {
    std::vector<std::string> parts;
    std::string part;
    std::istringstream is(v);
    while (std::getline(is, part, ',')) parts.push_back(part);
    return parts;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("trainer state line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "step") s.step = parse_uint(key, value);
      else if (key == "epoch") s.epoch = parse_uint(key, value);
      else if (key == "lr") s.lr = parse_double(key, value);
      else if (key == "history") {
        for (const auto& v : items(value)) s.epoch_history.push_back(parse_double(key, v));
      } else if (key == "epoch_loss_sum") s.epoch_loss_sum = parse_double(key, value);
      else if (key == "epoch_steps") s.epoch_steps = parse_uint(key, value);
      else if (key == "finished") s.finished = parse_flag(key, value);
      else if (key == "mined") {
        for (const auto& v : items(value)) {
          PairIndex p;
          char sep1 = 0, sep2 = 0;
          std::istringstream ps(v);
          if (!(ps >> p.first >> sep1 >> p.second >> sep2 >> p.label) || sep1 != ':' || sep2 != ':') {
            throw FormatError("bad mined pair '" + v + "'");
          }
          s.mined.push_back(p);
        }
      } else if (key == "rng") s.rng_state = value;
      else throw FormatError("unknown trainer state key '" + key + "'");
    } catch (const ConfigError& e) {
      throw FormatError(std::string("trainer state: ") + e.what());
    }
  }
  return s;
}

Trainer::Trainer(Model<float>& model, TrainConfig config, const DatasetManifest& manifest,
                 std::span<const ImageRecord> images)
    : model_(&model),
      config_(std::move(config)),
      manifest_(&manifest),
      images_(images),
      sampler_(manifest),
      start_(std::chrono::steady_clock::now()) {
  config_.validate();
  if (images.size() != manifest.entries.size()) {
    throw ArgumentError("image count does not match the manifest");
  }
  if (sampler_.positive_identities().empty() && config_.pos_per_batch > 0) {
    throw DataError("training set has no cross-camera positive pairs");
  }
  if (sampler_.identities().size() < 2 && config_.pos_per_batch < config_.batch_size) {
    throw DataError("training set needs at least two identities for negative pairs");
  }
  steps_per_epoch_ = config_.steps_per_epoch;
  if (steps_per_epoch_ == 0) {
    const std::size_t pos = std::max<std::size_t>(config_.pos_per_batch, 1);
    steps_per_epoch_ = std::max<std::size_t>(1, (sampler_.cross_camera_pair_count() + pos - 1) / pos);
  }
  std::seed_seq seq{static_cast<std::uint32_t>(config_.seed),
                    static_cast<std::uint32_t>(config_.seed >> 32), 0x7a1u};
  rng_.seed(seq);
  state_.lr = config_.base_lr;
  state_.momentum = MomentumState<float>(model.num_learnable());
}

bool Trainer::done() const {
  if (state_.finished) return true;
  if (config_.max_steps != 0 && state_.step >= config_.max_steps) return true;
  return state_.epoch >= config_.max_epochs;
}

void Trainer::maybe_mine() {
  if (!config_.hard_negative_mining) return;
  const std::size_t negatives = config_.batch_size - config_.pos_per_batch;
  const std::size_t pool = config_.mining_pool ? config_.mining_pool : std::max<std::size_t>(8 * negatives, 1);
  const std::size_t keep = config_.mining_keep ? config_.mining_keep : std::max<std::size_t>(pool / 4, 1);
  state_.mined = mine_hard_negatives(*model_, sampler_, images_, pool, keep, rng_);
}

void Trainer::end_epoch() {
  state_.epoch_history.push_back(state_.epoch_loss_sum / static_cast<double>(state_.epoch_steps));
  const double next = lr_schedule_step(state_.epoch_history, state_.lr, config_);
  if (next != state_.lr) {
    state_.lr = next;
    state_.epoch_history.clear();
  }
  ++state_.epoch;
  state_.epoch_loss_sum = 0;
  state_.epoch_steps = 0;
}

StepRecord Trainer::step() {
  if (state_.epoch_steps == 0) maybe_mine();
  const PairBatch batch = sample_batch(sampler_, config_, rng_, state_.mined);
  const auto [first, second] = materialize<float>(batch, images_, config_.augmentation, rng_);
  const auto labels = batch.labels();
  StepRecord rec;
  rec.lr = state_.lr;
  rec.loss = static_cast<double>(train_step(*model_, state_.momentum, first, second, labels, state_.lr, config_));
  rec.step = ++state_.step;
  rec.epoch = state_.epoch;
  state_.epoch_loss_sum += rec.loss;
  ++state_.epoch_steps;
  if (state_.epoch_steps >= steps_per_epoch_) end_epoch();
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  if (on_step_) on_step_(rec);
  return rec;
}

void Trainer::run(const std::function<bool(const StepRecord&)>& stop) {
  while (!done()) {
    const StepRecord rec = step();
    if (stop && stop(rec)) break;
  }
  state_.finished = true;
}

TrainerState Trainer::snapshot() const {
  TrainerState s = state_;
  std::ostringstream out;
  out << rng_;
  s.rng_state = out.str();
  return s;
}

void Trainer::restore(TrainerState state) {
  if (state.momentum.velocity.size() != model_->num_learnable()) {
    throw FormatError("momentum state does not match the model");
  }
  if (!state.rng_state.empty()) {
    std::istringstream in(state.rng_state);
    in >> rng_;
    if (!in) throw FormatError("unreadable generator state");
  }
  state_ = std::move(state);
}

TrainingLog::TrainingLog(const fs::path& path) : path_(path) {
  if (!fs::exists(path_)) {
    std::ofstream out(path_);
    if (!out) throw IoError("cannot write training log " + path_.string());
    out << "step\tepoch\tlr\tloss\twall_seconds\n";
  }
}

void TrainingLog::append(const StepRecord& r) {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to training log " + path_.string());
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%.6g\t%.6f\t%.3f\n", r.step, r.epoch, r.lr, r.loss,
                r.wall_seconds);
  out << buf;
}

template std::pair<BasicTensor4<float>, BasicTensor4<float>> materialize(
    const PairBatch&, std::span<const ImageRecord>, AugmentPolicy, std::mt19937_64&);
template std::pair<BasicTensor4<double>, BasicTensor4<double>> materialize(
    const PairBatch&, std::span<const ImageRecord>, AugmentPolicy, std::mt19937_64&);
template float train_step(Model<float>&, MomentumState<float>&, const BasicTensor4<float>&,
                          const BasicTensor4<float>&, std::span<const int>, double,
                          const TrainConfig&);
template double train_step(Model<double>&, MomentumState<double>&, const BasicTensor4<double>&,
                           const BasicTensor4<double>&, std::span<const int>, double,
                           const TrainConfig&);

}  // namespace dhsl
