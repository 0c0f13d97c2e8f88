#include <gtest/gtest.h>

#include <cmath>
#include <array>
#include <fstream>
#include <map>
#include <set>

#include "dhsl/data.hpp"
#include "test_support.hpp"

using namespace dhsl;
using namespace dhsl::testing;

namespace {

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Image img(h, w);
  std::uniform_int_distribution<int> level(0, 255);
  for (auto& v : img.pixels) v = static_cast<float>(level(rng)) / 255.0f;
  return img;
}

/// Half-pixel-center bilinear sample with clamped borders, written out per corner.
double bilinear_oracle(const Image& src, double sy, double sx, std::size_t c) {
  auto clamp_index = [](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v, 0.0, static_cast<double>(n - 1)));
  };
  const double fy = std::floor(sy), fx = std::floor(sx);
  const double ty = sy - fy, tx = sx - fx;
  const std::size_t y0 = clamp_index(fy, src.height), y1 = clamp_index(fy + 1, src.height);
  const std::size_t x0 = clamp_index(fx, src.width), x1 = clamp_index(fx + 1, src.width);
  return (1 - ty) * (1 - tx) * src.at(y0, x0, c) + (1 - ty) * tx * src.at(y0, x1, c) +
         ty * (1 - tx) * src.at(y1, x0, c) + ty * tx * src.at(y1, x1, c);
}

}  // namespace

TEST(Manifest, ParsesFilenameConvention) {
  const auto e = parse_entry_filename("0007_c2_03.png");
  EXPECT_EQ(e.identity, 7);
  EXPECT_EQ(e.camera, 2);
  EXPECT_FALSE(e.is_distractor);
  EXPECT_EQ(parse_entry_filename("12_1_0.ppm").camera, 1);
  const auto bg = parse_entry_filename("bg_c1_0004.png");
  EXPECT_TRUE(bg.is_distractor);
  EXPECT_EQ(bg.identity, kDistractorIdentity);
  for (const char* bad : {"person.png", "7_c2.png", "x_c1_0.png", "7_cx_0.png", "-3_c1_0.png"}) {
    EXPECT_THROW(parse_entry_filename(bad), DataError) << bad;
  }
}

TEST(Manifest, DirectoryErrorsNameTheProblem) {
  TempDir dir;
  EXPECT_THROW(load_manifest(dir.path()), DataError);
  EXPECT_THROW(load_manifest(dir.path() / "missing"), DataError);
  std::ofstream(dir.path() / "oops.png") << "x";
  try {
    load_manifest(dir.path());
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("oops.png"), std::string::npos);
  }
}

TEST(Manifest, PureDistractorDirectory) {
  TempDir dir;
  const auto png = encode_png(Image(4, 4, 0.5f));
  for (int i = 0; i < 3; ++i) write_file(dir.path() / ("bg_c1_000" + std::to_string(i) + ".png"), png);
  const auto m = load_manifest(dir.path());
  EXPECT_EQ(m.entries.size(), 3u);
  EXPECT_TRUE(m.identities().empty());
  EXPECT_EQ(m.distractor_count(), 3u);
}

TEST(Manifest, SyntheticRoundTripsThroughDisk) {
  const auto ds = generate_synthetic({20, 2, 2, 3, 0.2, 7});
  TempDir dir;
  write_dataset(ds, dir.path());
  const auto by_name = load_manifest(dir.path());
  EXPECT_EQ(by_name, ds.manifest);
  const auto by_file = load_manifest_file(dir.path() / "manifest.tsv");
  EXPECT_EQ(by_file, ds.manifest);
  const auto images = load_images(by_name);
  ASSERT_EQ(images.size(), ds.images.size());
  for (std::size_t i = 0; i < images.size(); ++i) ASSERT_EQ(images[i], ds.images[i]) << i;
}

TEST(Manifest, JsonLinesManifest) {
  TempDir dir;
  std::ofstream(dir.path() / "m.jsonl") << "{\"path\":\"a.png\",\"identity\":3,\"camera\":1}\n"
                                        << "# comment\n"
                                        << "{\"path\":\"b.png\",\"identity\":-1,\"camera\":2,\"is_distractor\":true}\n";
  const auto m = load_manifest_file(dir.path() / "m.jsonl");
  ASSERT_EQ(m.entries.size(), 2u);
  EXPECT_EQ(m.entries[0].identity, 3);
  EXPECT_TRUE(m.entries[1].is_distractor);
  std::ofstream(dir.path() / "bad.jsonl") << "{\"path\":\"a.png\"}\n";
  EXPECT_THROW(load_manifest_file(dir.path() / "bad.jsonl"), DataError);
}

TEST(Manifest, SubsetKeepsSourceIndices) {
  const auto ds = generate_synthetic({5, 1, 2, 2, 0.0, 3});
  const std::vector<int> ids{1, 3};
  const auto sub = subset(ds.manifest, ids, true);
  EXPECT_EQ(sub.manifest.identities(), ids);
  EXPECT_EQ(sub.manifest.distractor_count(), 2u);
  const auto gathered = sub.gather<ImageRecord>(ds.images);
  for (std::size_t i = 0; i < gathered.size(); ++i) {
    EXPECT_EQ(sub.manifest.entries[i], ds.manifest.entries[sub.source_indices[i]]);
    EXPECT_EQ(gathered[i], ds.images[sub.source_indices[i]]);
  }
}

TEST(Decode, NativeSizePassesThroughBothFormats) {
  std::mt19937_64 rng(1);
  const auto img = random_image(kImageHeight, kImageWidth, rng);
  EXPECT_EQ(decode_resize(encode_png(img)), img);
  EXPECT_EQ(decode_resize(encode_ppm(img)), img);
}

TEST(Decode, RejectsUndecodableBytes) {
  const std::vector<std::uint8_t> junk{1, 2, 3, 4, 5};
  EXPECT_THROW(decode_image(junk), DataError);
  auto png = encode_png(Image(4, 4, 0.2f));
  png.resize(png.size() / 2);
  EXPECT_THROW(decode_image(png), DataError);
}

TEST(Resize, ConstantImageStaysConstant) {
  Image src(256, 96);
  for (std::size_t i = 0; i < src.pixels.size(); i += 3) {
    src.pixels[i] = 0.2f;
    src.pixels[i + 1] = 0.6f;
    src.pixels[i + 2] = 0.9f;
  }
  const auto out = decode_resize(encode_png(src));
  ASSERT_EQ(out.height, kImageHeight);
  ASSERT_EQ(out.width, kImageWidth);
  for (std::size_t i = 0; i < out.pixels.size(); i += 3) {
    ASSERT_NEAR(out.pixels[i], std::round(0.2 * 255) / 255, 1e-6);
    ASSERT_NEAR(out.pixels[i + 1], std::round(0.6 * 255) / 255, 1e-6);
    ASSERT_NEAR(out.pixels[i + 2], std::round(0.9 * 255) / 255, 1e-6);
  }
}

TEST(Resize, CheckerboardMatchesBilinearOracle) {
  Image src(2, 2);
  const float colors[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t c = 0; c < 3; ++c) src.pixels[p * 3 + c] = colors[p][c];
  const auto out = resize_bilinear(src, kImageHeight, kImageWidth);
  const double sy = 2.0 / kImageHeight, sx = 2.0 / kImageWidth;
  for (std::size_t y = 0; y < kImageHeight; ++y)
    for (std::size_t x = 0; x < kImageWidth; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double want = bilinear_oracle(src, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5, c);
        ASSERT_NEAR(out.at(y, x, c), want, 1e-6) << y << "," << x << "," << c;
      }
}

TEST(Augment, MirrorIsAnInvolution) {
  std::mt19937_64 rng(2);
  const auto img = random_image(kImageHeight, kImageWidth, rng);
  const auto m = mirror(img);
  EXPECT_NE(m, img);
  EXPECT_EQ(m.at(5, 0, 1), img.at(5, kImageWidth - 1, 1));
  EXPECT_EQ(mirror(m), img);
}

TEST(Augment, RotationIdentityAndConstants) {
  std::mt19937_64 rng(3);
  const auto img = random_image(kImageHeight, kImageWidth, rng);
  const auto r0 = rotate(img, 0.0);
  EXPECT_LT(max_abs_diff(r0.pixels, img.pixels), 1e-6);
  const Image flat(kImageHeight, kImageWidth, 0.37f);
  for (double deg : {-3.0, -1.2, 2.5, 3.0}) {
    EXPECT_LT(max_abs_diff(rotate(flat, deg).pixels, flat.pixels), 1e-6) << deg;
  }
}

TEST(Augment, PoliciesKeepShapeAndRange) {
  std::mt19937_64 rng(4);
  const auto img = random_image(kImageHeight, kImageWidth, rng);
  EXPECT_EQ(augment(img, AugmentPolicy::none, rng), img);
  std::size_t flipped = 0;
  for (int i = 0; i < 200; ++i) {
    const auto m = augment(img, AugmentPolicy::mirror, rng);
    if (m != img) {
      EXPECT_EQ(m, mirror(img));
      ++flipped;
    }
    const auto r = augment(img, AugmentPolicy::mirror_rotate, rng);
    ASSERT_EQ(r.height, kImageHeight);
    ASSERT_EQ(r.width, kImageWidth);
    for (float v : r.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  EXPECT_GT(flipped, 60u);
  EXPECT_LT(flipped, 140u);
  EXPECT_EQ(parse_augment_policy(to_string(AugmentPolicy::mirror_rotate)), AugmentPolicy::mirror_rotate);
}

namespace {

DatasetManifest identity_manifest(int n) {
  DatasetManifest m;
  for (int id = 0; id < n; ++id) {
    for (int cam = 1; cam <= 2; ++cam) m.entries.push_back({std::to_string(id) + "_" + std::to_string(cam), id, cam, false});
  }
  return m;
}

}  // namespace

TEST(Split, ViperPartitionsSixHundredThirtyTwoIdentities) {
  const auto m = identity_manifest(632);
  const auto splits = make_split(m, Protocol::viper(), 42);
  ASSERT_EQ(splits.size(), 10u);
  std::set<std::vector<int>> distinct;
  for (const auto& s : splits) {
    EXPECT_EQ(s.train_ids.size(), 316u);
    EXPECT_EQ(s.test_ids.size(), 316u);
    std::set<int> all(s.train_ids.begin(), s.train_ids.end());
    for (int id : s.test_ids) EXPECT_TRUE(all.insert(id).second) << "identity in both halves";
    EXPECT_EQ(all.size(), 632u);
    distinct.insert(s.test_ids);
  }
  EXPECT_EQ(distinct.size(), 10u);
  const auto again = make_split(m, Protocol::viper(), 42);
  for (std::size_t t = 0; t < 10; ++t) {
    EXPECT_EQ(again[t].train_ids, splits[t].train_ids);
    EXPECT_EQ(again[t].seed, splits[t].seed);
  }
  EXPECT_NE(make_split(m, Protocol::viper(), 43)[0].test_ids, splits[0].test_ids);
}

TEST(Split, ProtocolShapes) {
  EXPECT_EQ(Protocol::grid().trials, 10u);
  EXPECT_TRUE(Protocol::grid().distractors_in_gallery);
  EXPECT_EQ(Protocol::grid().train_identities, 125u);
  EXPECT_EQ(Protocol::cuhk03().train_identities, 1160u);
  EXPECT_EQ(Protocol::cuhk03().test_identities, 100u);
  EXPECT_EQ(Protocol::cuhk03().trials, 20u);
  const auto splits = make_split(identity_manifest(250), Protocol::grid(), 1);
  EXPECT_EQ(splits.size(), 10u);
  EXPECT_TRUE(splits[0].distractors_in_gallery);
  EXPECT_EQ(parse_protocol_kind("cuhk03"), ProtocolKind::cuhk03);
  EXPECT_THROW(parse_protocol_kind("market"), ConfigError);
}

TEST(Split, InsufficientIdentitiesStatesCounts) {
  try {
    make_split(identity_manifest(100), Protocol::viper(), 1);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("632"), std::string::npos) << msg;
    EXPECT_NE(msg.find("100"), std::string::npos) << msg;
  }
}

TEST(Synthetic, CountsAndManifestConsistency) {
  const auto ds = generate_synthetic({20, 2, 2, 0, 0.2, 1});
  EXPECT_EQ(ds.images.size(), 80u);
  EXPECT_EQ(ds.manifest.entries.size(), 80u);
  EXPECT_EQ(ds.manifest.identities().size(), 20u);
  EXPECT_EQ(ds.appearances.size(), 20u);
  for (const auto& img : ds.images) {
    ASSERT_EQ(img.height, kImageHeight);
    ASSERT_EQ(img.width, kImageWidth);
    for (float v : img.pixels) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
  const auto with_bg = generate_synthetic({20, 2, 2, 6, 0.2, 1});
  EXPECT_EQ(with_bg.manifest.distractor_count(), 6u);
  EXPECT_THROW(generate_synthetic({1, 2, 2, 0, 0.2, 1}), DataError);
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = generate_synthetic({4, 2, 2, 1, 0.3, 5});
  const auto b = generate_synthetic({4, 2, 2, 1, 0.3, 5});
  EXPECT_EQ(a.images, b.images);
  EXPECT_NE(a.images, generate_synthetic({4, 2, 2, 1, 0.3, 6}).images);
}

TEST(Synthetic, DifficultyZeroRendersIdentitiesIdentically) {
  const auto ds = generate_synthetic({6, 2, 3, 0, 0.0, 9});
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    for (std::size_t j = 0; j < ds.images.size(); ++j) {
      const bool same = ds.manifest.entries[i].identity == ds.manifest.entries[j].identity;
      if (same) {
        ASSERT_EQ(ds.images[i], ds.images[j]);
      } else {
        ASSERT_NE(ds.images[i], ds.images[j]);
      }
    }
}

TEST(Synthetic, IdentityColorMarginExceedsNuisance) {
  // Clothing colour signature: mean torso and mean leg colour, sampled away
  // from the edges a one-pixel shift can reach. Within one camera the tint is
  // shared, so identities are compared there. The closest two identities
  // must lie farther apart than any image lies from its own identity mean.
  const auto ds = generate_synthetic({20, 3, 2, 0, 0.1, 3});
  using Signature = std::array<double, 6>;
  auto region_mean = [](const Image& img, std::size_t y0, std::size_t y1, std::initializer_list<std::pair<std::size_t, std::size_t>> cols,
                        Signature& sig, std::size_t offset) {
    std::size_t count = 0;
    for (std::size_t y = y0; y < y1; ++y)
      for (const auto& [x0, x1] : cols)
        for (std::size_t x = x0; x < x1; ++x, ++count)
          for (std::size_t c = 0; c < 3; ++c) sig[offset + c] += img.at(y, x, c);
    for (std::size_t c = 0; c < 3; ++c) sig[offset + c] /= static_cast<double>(count);
  };
  auto dist = [](const Signature& a, const Signature& b) {
    double s = 0;
    for (std::size_t k = 0; k < 6; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
    return std::sqrt(s);
  };
  std::map<std::pair<int, int>, std::vector<Signature>> sigs;  // (camera, identity)
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    Signature sig{};
    region_mean(ds.images[i], 24, 66, {{19, 30}}, sig, 0);
    region_mean(ds.images[i], 70, 116, {{18, 22}, {27, 31}}, sig, 3);
    sigs[{ds.manifest.entries[i].camera, ds.manifest.entries[i].identity}].push_back(sig);
  }
  double spread = 0;
  std::map<int, std::vector<Signature>> centers;
  for (const auto& [key, list] : sigs) {
    Signature c{};
    for (const auto& m : list)
      for (std::size_t k = 0; k < 6; ++k) c[k] += m[k] / static_cast<double>(list.size());
    for (const auto& m : list) spread = std::max(spread, dist(m, c));
    centers[key.first].push_back(c);
  }
  double margin = INFINITY;
  for (const auto& [cam, list] : centers)
    for (std::size_t a = 0; a < list.size(); ++a)
      for (std::size_t b = a + 1; b < list.size(); ++b) margin = std::min(margin, dist(list[a], list[b]));
  EXPECT_GT(margin, spread);
}

TEST(Tensorize, StacksRecordsInOrder) {
  const auto ds = generate_synthetic({2, 1, 2, 0, 0.1, 2});
  std::vector<const ImageRecord*> ptrs;
  for (const auto& r : ds.images) ptrs.push_back(&r);
  const auto t = to_tensor<float>(ptrs);
  EXPECT_EQ(t.shape(), (Shape4{4, kImageHeight, kImageWidth, 3}));
  EXPECT_TRUE(std::equal(ds.images[2].pixels.begin(), ds.images[2].pixels.end(), t.sample(2).begin()));
}
