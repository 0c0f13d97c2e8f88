#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dhsl/tensor.hpp"

namespace dhsl {

inline constexpr std::size_t kImageHeight = 128;
inline constexpr std::size_t kImageWidth = 48;
inline constexpr std::size_t kImageChannels = 3;

/// Interleaved RGB image, values in [0, 1], row-major with channels fastest.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = kImageChannels;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f)
      : height(h), width(w), pixels(h * w * kImageChannels, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// An image after the resize stage: exactly 128 x 48 x 3.
using ImageRecord = Image;

// ---------------------------------------------------------------------------
// Manifests

inline constexpr int kDistractorIdentity = -1;

struct ManifestEntry {
  std::string path;  // relative to the dataset root
  int identity = 0;
  int camera = 0;
  bool is_distractor = false;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::string name;
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;

  /// Sorted identities that own at least one non-distractor image.
  std::vector<int> identities() const;
  std::vector<std::size_t> distractor_indices() const;
  std::size_t distractor_count() const { return distractor_indices().size(); }

  /// Entries whose identity is in `ids`, plus distractors if requested.
  DatasetManifest filter_identities(std::span<const int> ids, bool keep_distractors = false) const;

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.entries == b.entries;
  }
};

/// A filtered manifest plus, for each kept entry, its index in the source.
struct ManifestSubset {
  DatasetManifest manifest;
  std::vector<std::size_t> source_indices;

  /// Picks the matching records out of images aligned with the source manifest.
  template <typename Record>
  std::vector<Record> gather(std::span<const Record> source) const {
    std::vector<Record> out;
    out.reserve(source_indices.size());
    for (std::size_t i : source_indices) out.push_back(source[i]);
    return out;
  }
};

ManifestSubset subset(const DatasetManifest& manifest, std::span<const int> ids,
                      bool keep_distractors = false);

/// Parses `<identity>_<camera>_<index>.<ext>` (camera may carry a `c`
/// prefix); the identity token `bg` marks a distractor.
ManifestEntry parse_entry_filename(const std::string& filename);

/// Indexes every .png / .ppm file under `root` by filename convention, in
/// lexicographic order.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// Reads a manifest file: tab-separated (path, identity, camera,
/// is_distractor) lines, or JSON lines when the extension is .jsonl.
DatasetManifest load_manifest_file(const std::filesystem::path& file);

/// Directory -> filename convention, file -> manifest file.
DatasetManifest open_dataset(const std::filesystem::path& path);

void write_manifest_tsv(const DatasetManifest& manifest, const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Decoding and resizing

/// Decodes PNG or binary PPM (P6) bytes at their native size.
Image decode_image(std::span<const std::uint8_t> bytes);

/// Bilinear resize with half-pixel centers and clamped borders.
Image resize_bilinear(const Image& src, std::size_t height, std::size_t width);

/// decode_image followed by a bilinear resize to 128 x 48.
ImageRecord decode_resize(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

/// 8-bit encodings; values are rounded to the nearest of 256 levels.
std::vector<std::uint8_t> encode_png(const Image& image);
std::vector<std::uint8_t> encode_ppm(const Image& image);

/// Decodes every manifest entry, in manifest order.
std::vector<ImageRecord> load_images(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentPolicy { none, mirror, mirror_rotate };

std::string to_string(AugmentPolicy policy);
AugmentPolicy parse_augment_policy(const std::string& text);

/// Flips the width axis.
Image mirror(const Image& image);

/// Rotates about the image center with bilinear resampling; samples that
/// fall outside the image replicate the nearest edge pixel.
Image rotate(const Image& image, double degrees);

inline constexpr double kMaxRotationDegrees = 3.0;

/// mirror: flip with probability 1/2. mirror_rotate: additionally rotate by
/// an angle drawn uniformly from [-3, +3] degrees.
ImageRecord augment(const ImageRecord& record, AugmentPolicy policy, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Evaluation protocols

enum class ProtocolKind { grid, viper, cuhk03, custom };

std::string to_string(ProtocolKind kind);
ProtocolKind parse_protocol_kind(const std::string& text);

struct Protocol {
  ProtocolKind kind = ProtocolKind::viper;
  std::size_t train_identities = 316;
  std::size_t test_identities = 316;
  std::size_t trials = 10;
  bool distractors_in_gallery = false;

  /// 125 train / 125 test identities, distractors in the gallery, 10 trials.
  static Protocol grid();
  /// 316 / 316, 10 trials.
  static Protocol viper();
  /// 1160 / 100, 20 trials.
  static Protocol cuhk03();
  static Protocol custom(std::size_t train, std::size_t test, std::size_t trials);
};

struct ProtocolSplit {
  std::size_t trial = 0;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  std::uint64_t seed = 0;
  bool distractors_in_gallery = false;
};

/// One identity-disjoint train/test split per trial, deterministic per seed.
std::vector<ProtocolSplit> make_split(const DatasetManifest& manifest, const Protocol& protocol,
                                      std::uint64_t master_seed);

// ---------------------------------------------------------------------------
// Synthetic identities

struct SynthConfig {
  std::size_t identities = 20;
  std::size_t images_per_camera = 2;
  std::size_t cameras = 2;
  std::size_t distractors = 0;
  /// 0 renders every image of an identity identically; larger values add
  /// camera tint, brightness changes, translation, background change and noise.
  double difficulty = 0.2;
  std::uint64_t seed = 1;
};

struct Rgb {
  float r = 0, g = 0, b = 0;
};

/// Procedural look of one person.
struct IdentityAppearance {
  Rgb hair, skin, upper, upper_secondary, lower, shoes, bag;
  int upper_pattern = 0;  // 0 solid, 1 horizontal stripes, 2 vertical stripes, 3 checker
  int pattern_period = 4;
  int bag_side = 0;       // 0 none, -1 left, +1 right
  int body_width = 0;     // offset from the nominal torso width
};

struct SyntheticDataset {
  DatasetManifest manifest;
  std::vector<ImageRecord> images;  // aligned with manifest.entries
  std::vector<IdentityAppearance> appearances;
};

/// Renders a desk-scale identity dataset. Throws DataError for fewer than
/// two identities.
SyntheticDataset generate_synthetic(const SynthConfig& config);

/// Writes every image as PNG plus a manifest.tsv into `dir`.
void write_dataset(const SyntheticDataset& dataset, const std::filesystem::path& dir);

/// Stacks records into an n x 128 x 48 x 3 tensor.
template <typename T = float>
BasicTensor4<T> to_tensor(std::span<const ImageRecord* const> records);

}  // namespace dhsl
