#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "dhsl/data.hpp"

namespace dhsl {

namespace fs = std::filesystem;

namespace {

constexpr float kNeutralBackground = 0.5f;

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

Rgb random_color(std::mt19937_64& rng, double s_lo = 0.3, double v_lo = 0.25) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = u(rng);
  const double s = s_lo + (1.0 - s_lo) * u(rng);
  const double v = v_lo + (0.95 - v_lo) * u(rng);
  return hsv_to_rgb(h, s, v);
}

double color_distance(const IdentityAppearance& a, const IdentityAppearance& b) {
  const float d[6] = {a.upper.r - b.upper.r, a.upper.g - b.upper.g, a.upper.b - b.upper.b,
                      a.lower.r - b.lower.r, a.lower.g - b.lower.g, a.lower.b - b.lower.b};
  double s = 0.0;
  for (float v : d) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

IdentityAppearance random_appearance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pattern(0, 3), period(3, 8), side(-1, 1), width(-2, 2);
  static const Rgb kSkins[] = {{0.96f, 0.80f, 0.69f}, {0.87f, 0.67f, 0.52f},
                               {0.68f, 0.48f, 0.35f}, {0.45f, 0.31f, 0.22f}};
  std::uniform_int_distribution<int> skin(0, 3);
  IdentityAppearance a;
  a.hair = random_color(rng, 0.2, 0.05);
  a.hair = {a.hair.r * 0.5f, a.hair.g * 0.5f, a.hair.b * 0.5f};
  a.skin = kSkins[skin(rng)];
  a.upper = random_color(rng);
  a.upper_secondary = random_color(rng);
  a.lower = random_color(rng);
  a.shoes = random_color(rng, 0.0, 0.05);
  a.bag = random_color(rng);
  a.upper_pattern = pattern(rng);
  a.pattern_period = period(rng);
  a.bag_side = side(rng);
  a.body_width = width(rng);
  return a;
}

struct Nuisance {
  Rgb gain{1, 1, 1};
  Rgb background{kNeutralBackground, kNeutralBackground, kNeutralBackground};
  float brightness = 1.0f;
  int shift_x = 0;
  int shift_y = 0;
  float noise = 0.0f;
};

void put(Image& img, int y, int x, const Rgb& c) {
  if (y < 0 || x < 0 || y >= static_cast<int>(img.height) || x >= static_cast<int>(img.width)) return;
  img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) = c.r;
  img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 1) = c.g;
  img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 2) = c.b;
}

Image render(const IdentityAppearance& a, const Nuisance& n, std::mt19937_64& rng) {
  const int h = static_cast<int>(kImageHeight);
  const int w = static_cast<int>(kImageWidth);
  Image img(kImageHeight, kImageWidth);
  for (int y = 0; y < h; ++y) {
    const float shade = 0.9f + 0.2f * static_cast<float>(y) / static_cast<float>(h);
    for (int x = 0; x < w; ++x) {
      put(img, y, x, {n.background.r * shade, n.background.g * shade, n.background.b * shade});
    }
  }
  const int cx = w / 2 + n.shift_x;
  const int oy = n.shift_y;

  // head
  for (int y = 6; y <= 21; ++y) {
    for (int x = cx - 7; x <= cx + 7; ++x) {
      const double ey = (y - 13.5) / 8.0;
      const double ex = (x - cx) / 6.5;
      if (ex * ex + ey * ey <= 1.0) put(img, y + oy, x, y < 11 ? a.hair : a.skin);
    }
  }
  // torso with pattern
  const int half = 9 + a.body_width;
  for (int y = 22; y < 68; ++y) {
    for (int x = cx - half; x <= cx + half; ++x) {
      bool alt = false;
      const int p = a.pattern_period;
      switch (a.upper_pattern) {
        case 1: alt = ((y - 22) / p) % 2 == 1; break;
        case 2: alt = ((x - cx + half) / p) % 2 == 1; break;
        case 3: alt = (((y - 22) / p) + ((x - cx + half) / p)) % 2 == 1; break;
        default: break;
      }
      put(img, y + oy, x, alt ? a.upper_secondary : a.upper);
    }
  }
  // legs and shoes
  for (int y = 68; y < 124; ++y) {
    const Rgb& c = y < 118 ? a.lower : a.shoes;
    for (int x = cx - 8; x <= cx - 1; ++x) put(img, y + oy, x, c);
    for (int x = cx + 1; x <= cx + 8; ++x) put(img, y + oy, x, c);
  }
  // bag
  if (a.bag_side != 0) {
    const int x0 = a.bag_side < 0 ? cx - half - 6 : cx + half + 1;
    for (int y = 40; y < 64; ++y) {
      for (int x = x0; x < x0 + 6; ++x) put(img, y + oy, x, a.bag);
    }
  }

  std::normal_distribution<float> noise(0.0f, 1.0f);
  const float gains[3] = {n.gain.r, n.gain.g, n.gain.b};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    float v = img.pixels[i] * gains[i % 3] * n.brightness;
    if (n.noise > 0.0f) v += n.noise * noise(rng);
    // 8-bit levels so that a PNG round trip is lossless
    img.pixels[i] = std::round(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  }
  return img;
}

std::mt19937_64 seeded(std::uint64_t seed, std::initializer_list<std::uint32_t> salt) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  words.insert(words.end(), salt.begin(), salt.end());
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

struct CameraLook {
  Rgb gain;
  Rgb background;
};

CameraLook camera_look(std::uint64_t seed, std::size_t camera, double difficulty) {
  auto rng = seeded(seed, {static_cast<std::uint32_t>(camera), 0xca3u});
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const auto gain = [&] { return static_cast<float>(1.0 + difficulty * u(rng)); };
  CameraLook look;
  look.gain = {gain(), gain(), gain()};
  const Rgb scene = random_color(rng, 0.0, 0.3);
  const float mix = static_cast<float>(std::min(1.0, 2.0 * difficulty));
  look.background = {kNeutralBackground + mix * (scene.r - kNeutralBackground),
                     kNeutralBackground + mix * (scene.g - kNeutralBackground),
                     kNeutralBackground + mix * (scene.b - kNeutralBackground)};
  return look;
}

Nuisance image_nuisance(const CameraLook& look, double difficulty, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Nuisance n;
  n.gain = look.gain;
  n.background = look.background;
  n.brightness = static_cast<float>(1.0 + difficulty * u(rng));
  n.shift_x = static_cast<int>(std::lround(difficulty * 16.0 * u(rng)));
  n.shift_y = static_cast<int>(std::lround(difficulty * 16.0 * u(rng)));
  n.noise = static_cast<float>(0.1 * difficulty);
  return n;
}

std::string entry_name(int identity, std::size_t camera, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%04d_c%zu_%02zu.png", identity, camera, index);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SynthConfig& config) {
  if (config.identities < 2) {
    throw DataError("synthetic dataset needs at least 2 identities to form negative pairs");
  }
  if (config.cameras == 0 || config.images_per_camera == 0) {
    throw DataError("synthetic dataset needs at least one camera and one image per camera");
  }
  if (config.difficulty < 0.0) throw DataError("difficulty must be >= 0");

  SyntheticDataset ds;
  ds.manifest.name = "synthetic";
  auto rng = seeded(config.seed, {0x1du});

  // Rejection sampling keeps identities apart in clothing color.
  constexpr double kMinDistance = 0.35;
  constexpr int kAttempts = 64;
  for (std::size_t id = 0; id < config.identities; ++id) {
    IdentityAppearance best;
    double best_dist = -1.0;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      IdentityAppearance cand = random_appearance(rng);
      double nearest = 1e9;
      for (const auto& other : ds.appearances) nearest = std::min(nearest, color_distance(cand, other));
      if (nearest > best_dist) {
        best = cand;
        best_dist = nearest;
      }
      if (nearest >= kMinDistance) break;
    }
    ds.appearances.push_back(best);
  }

  std::vector<CameraLook> looks;
  for (std::size_t cam = 0; cam < config.cameras; ++cam) {
    looks.push_back(camera_look(config.seed, cam, config.difficulty));
  }

  for (std::size_t id = 0; id < config.identities; ++id) {
    for (std::size_t cam = 0; cam < config.cameras; ++cam) {
      for (std::size_t k = 0; k < config.images_per_camera; ++k) {
        auto img_rng = seeded(config.seed, {static_cast<std::uint32_t>(id), static_cast<std::uint32_t>(cam),
                                            static_cast<std::uint32_t>(k), 0x1au});
        const Nuisance n = image_nuisance(looks[cam], config.difficulty, img_rng);
        ds.images.push_back(render(ds.appearances[id], n, img_rng));
        ds.manifest.entries.push_back({entry_name(static_cast<int>(id), cam, k),
                                       static_cast<int>(id), static_cast<int>(cam), false});
      }
    }
  }

  for (std::size_t k = 0; k < config.distractors; ++k) {
    auto d_rng = seeded(config.seed, {static_cast<std::uint32_t>(k), 0xb9u});
    const IdentityAppearance look = random_appearance(d_rng);
    const std::size_t cam = std::uniform_int_distribution<std::size_t>(0, config.cameras - 1)(d_rng);
    const Nuisance n = image_nuisance(looks[cam], config.difficulty, d_rng);
    ds.images.push_back(render(look, n, d_rng));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "bg_c%zu_%04zu.png", cam, k);
    ds.manifest.entries.push_back({buf, kDistractorIdentity, static_cast<int>(cam), true});
  }

  // Keep manifest order identical to what load_manifest produces.
  std::vector<std::size_t> order(ds.images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return ds.manifest.entries[a].path < ds.manifest.entries[b].path;
  });
  SyntheticDataset sorted;
  sorted.manifest.name = ds.manifest.name;
  sorted.appearances = std::move(ds.appearances);
  for (std::size_t i : order) {
    sorted.manifest.entries.push_back(ds.manifest.entries[i]);
    sorted.images.push_back(std::move(ds.images[i]));
  }
  return sorted;
}

void write_dataset(const SyntheticDataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    write_file(dir / dataset.manifest.entries[i].path, encode_png(dataset.images[i]));
  }
  write_manifest_tsv(dataset.manifest, dir / "manifest.tsv");
}

}  // namespace dhsl
