#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dhsl/data.hpp"
#include "dhsl/model.hpp"

namespace dhsl {

struct TrainConfig {
  double alpha = 5e-2;
  std::size_t batch_size = 128;
  std::size_t pos_per_batch = 64;
  double momentum = 0.9;
  double base_lr = 1e-3;
  double lr_decay_factor = 0.1;
  double min_lr = 1e-4;
  std::size_t plateau_patience = 5;
  std::size_t max_epochs = 100;
  /// 0 derives one epoch from the number of cross-camera positive pairs.
  std::size_t steps_per_epoch = 0;
  /// Hard cap on optimizer steps across all epochs; 0 means no cap.
  std::size_t max_steps = 0;
  bool hard_negative_mining = false;
  /// Negative pairs scored per mining round; 0 means 8 x the negatives per batch.
  std::size_t mining_pool = 0;
  /// Pairs kept per mining round; 0 means a quarter of the pool.
  std::size_t mining_keep = 0;
  std::uint64_t seed = 1;
  double channel_multiplier = 1.0;
  /// L2 penalty on conv filters, off by default.
  double cnn_weight_decay = 0.0;
  HeadMode head_mode = HeadMode::hybrid;
  AugmentPolicy augmentation = AugmentPolicy::mirror_rotate;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  /// Applies recognized keys and returns true; unknown keys are left alone
  /// and reported by returning false.
  bool apply(const std::string& key, const std::string& value);
};

template <typename T>
struct MomentumState {
  std::vector<T> velocity;

  MomentumState() = default;
  explicit MomentumState(std::size_t n) : velocity(n, T(0)) {}
};

struct PairIndex {
  std::size_t first = 0;   // manifest entry index
  std::size_t second = 0;  // manifest entry index
  int label = 0;           // +1 same identity, -1 different

  friend bool operator==(const PairIndex&, const PairIndex&) = default;
};

struct PairBatch {
  std::vector<PairIndex> pairs;

  std::vector<int> labels() const;
};

/// Index of a manifest used to draw labelled pairs. Distractors are ignored.
class PairSampler {
 public:
  explicit PairSampler(const DatasetManifest& manifest);

  const DatasetManifest& manifest() const noexcept { return *manifest_; }
  const std::vector<int>& identities() const noexcept { return identities_; }
  /// Identities with images in at least two cameras.
  const std::vector<int>& positive_identities() const noexcept { return positive_ids_; }
  std::size_t cross_camera_pair_count() const noexcept { return cross_pairs_; }

  PairIndex positive(std::mt19937_64& rng) const;
  PairIndex negative(std::mt19937_64& rng) const;

 private:
  const DatasetManifest* manifest_;
  std::vector<int> identities_;
  std::vector<int> positive_ids_;
  std::map<int, std::vector<std::size_t>> by_identity_;
  std::size_t cross_pairs_ = 0;
};

/// pos_per_batch positives then batch_size - pos_per_batch negatives. When
/// `mined` is non-empty, negatives are drawn from it instead of at random.
PairBatch sample_batch(const PairSampler& sampler, const TrainConfig& config, std::mt19937_64& rng,
                       std::span<const PairIndex> mined = {});

/// Stacks the (augmented) images of a batch into the two branch tensors.
template <typename T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> materialize(const PairBatch& batch,
                                                        std::span<const ImageRecord> images,
                                                        AugmentPolicy policy, std::mt19937_64& rng);

/// One SGD step with classical momentum: v = mu*v - lr*g, theta += v.
/// Throws DivergenceError when the loss, a parameter or a gradient is not
/// finite, naming the parameter's layer (for gradients, the one nearest the
/// loss); parameters are untouched in that case.
template <typename T>
T train_step(Model<T>& model, MomentumState<T>& state, const BasicTensor4<T>& first,
             const BasicTensor4<T>& second, std::span<const int> labels, double lr,
             const TrainConfig& config);

/// Plateau rule on epoch losses. The epoch that last improved on the best
/// loss by more than 1e-3 relative opens a window; once `plateau_patience`
/// epochs (that one included) pass without another such improvement the
/// rate is multiplied by lr_decay_factor, never going below min_lr.
double lr_schedule_step(std::span<const double> epoch_losses, double lr, const TrainConfig& config);

/// Indices of the k largest scores, in descending score order; equal scores
/// are ordered by index.
std::vector<std::size_t> top_k_indices(std::span<const double> scores, std::size_t k);

/// Scores `pool_size` random negative pairs with the current model and keeps
/// the `keep` most similar ones.
std::vector<PairIndex> mine_hard_negatives(Model<float>& model, const PairSampler& sampler,
                                           std::span<const ImageRecord> images,
                                           std::size_t pool_size, std::size_t keep,
                                           std::mt19937_64& rng);

/// Similarity scores of arbitrary pairs under the model's hybrid head.
std::vector<double> score_pairs(Model<float>& model, std::span<const PairIndex> pairs,
                                std::span<const ImageRecord> images);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  double loss = 0;
  double wall_seconds = 0;
};

/// Everything beyond the model parameters needed to resume bit-identically.
struct TrainerState {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  std::vector<double> epoch_history;
  double epoch_loss_sum = 0;
  std::size_t epoch_steps = 0;
  std::string rng_state;
  std::vector<PairIndex> mined;
  bool finished = false;
  MomentumState<float> momentum;

  std::string to_text() const;  // excludes momentum, which is stored as tensors
  static TrainerState from_text(const std::string& text);
};

/// Drives sampling, augmentation, optimization, lr scheduling and mining
/// over one training manifest.
class Trainer {
 public:
  /// `images` is aligned with `manifest.entries`.
  Trainer(Model<float>& model, TrainConfig config, const DatasetManifest& manifest,
          std::span<const ImageRecord> images);

  /// Performs one step and returns its record.
  StepRecord step();

  /// Steps until max_epochs / max_steps is reached or `stop` returns true.
  void run(const std::function<bool(const StepRecord&)>& stop = {});

  bool done() const;
  std::size_t steps_per_epoch() const noexcept { return steps_per_epoch_; }
  const TrainConfig& config() const noexcept { return config_; }
  const TrainerState& state() const noexcept { return state_; }
  void restore(TrainerState state);
  TrainerState snapshot() const;
  void mark_finished() { state_.finished = true; }

  /// Called after every step, e.g. for logging.
  void on_step(std::function<void(const StepRecord&)> cb) { on_step_ = std::move(cb); }

 private:
  void maybe_mine();
  void end_epoch();

  Model<float>* model_;
  TrainConfig config_;
  const DatasetManifest* manifest_;
  std::span<const ImageRecord> images_;
  PairSampler sampler_;
  std::size_t steps_per_epoch_ = 1;
  std::mt19937_64 rng_;
  TrainerState state_;
  std::chrono::steady_clock::time_point start_;
  std::function<void(const StepRecord&)> on_step_;
};

/// Appends "step\tepoch\tlr\tloss\twall_seconds" lines.
class TrainingLog {
 public:
  explicit TrainingLog(const std::filesystem::path& path);
  void append(const StepRecord& record);

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointLayout = "nhwc;filters=kh,kw,cin,cout;f32le";

struct Checkpoint {
  Model<float> model;
  TrainConfig config;
  std::optional<TrainerState> trainer;
};

void save_checkpoint(Model<float>& model, const TrainConfig& config, const TrainerState* trainer,
                     const std::filesystem::path& path);

/// Throws FormatError on bad magic, version, layout or tensor dimensions.
/// Nothing is returned unless the whole file parses.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dhsl
