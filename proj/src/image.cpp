#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "dhsl/data.hpp"

namespace dhsl {

namespace fs = std::filesystem;

namespace {

bool is_png(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), kSignature, 8) == 0;
}

Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw DataError(std::string("undecodable PNG: ") + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError(std::string("undecodable PNG: ") + img.message);
  }
  Image out(img.height, img.width);
  for (std::size_t i = 0; i < raw.size(); ++i) out.pixels[i] = raw[i] / 255.0f;
  return out;
}

// Skips whitespace and '#' comments, then reads one unsigned integer.
std::size_t read_ppm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos] - '0');
    ++pos;
    if (++digits > 9) throw DataError("undecodable PPM: header value too large");
  }
  if (digits == 0) throw DataError("undecodable PPM: malformed header");
  return value;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 2;
  const std::size_t width = read_ppm_token(bytes, pos);
  const std::size_t height = read_ppm_token(bytes, pos);
  const std::size_t maxval = read_ppm_token(bytes, pos);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) {
    throw DataError("undecodable PPM: bad dimensions or maxval");
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw DataError("undecodable PPM: missing separator before raster");
  }
  ++pos;
  const std::size_t sample_bytes = maxval < 256 ? 1 : 2;
  const std::size_t count = width * height * kImageChannels;
  if (bytes.size() - pos < count * sample_bytes) throw DataError("undecodable PPM: truncated raster");
  Image out(height, width);
  const auto max_level = static_cast<float>(maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = bytes[pos + i * sample_bytes];
    if (sample_bytes == 2) v = (v << 8) | bytes[pos + i * 2 + 1];
    out.pixels[i] = std::min(1.0f, static_cast<float>(v) / max_level);
  }
  return out;
}

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Bilinear sample with edge replication.
void sample_bilinear(const Image& src, double y, double x, float* out) {
  const double max_y = static_cast<double>(src.height - 1);
  const double max_x = static_cast<double>(src.width - 1);
  y = std::clamp(y, 0.0, max_y);
  x = std::clamp(x, 0.0, max_x);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, src.height - 1);
  const std::size_t x1 = std::min(x0 + 1, src.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  for (std::size_t c = 0; c < src.channels; ++c) {
    const double top = src.at(y0, x0, c) * (1.0 - fx) + src.at(y0, x1, c) * fx;
    const double bottom = src.at(y1, x0, c) * (1.0 - fx) + src.at(y1, x1, c) * fx;
    out[c] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
  }
}

}  // namespace

Image decode_image(std::span<const std::uint8_t> bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  throw DataError("undecodable image: neither PNG nor binary PPM");
}

Image resize_bilinear(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == 0 || src.width == 0) throw DataError("cannot resize an empty image");
  if (src.height == height && src.width == width) return src;
  Image out(height, width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      sample_bilinear(src, (y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5,
                      &out.pixels[(y * width + x) * out.channels]);
    }
  }
  return out;
}

ImageRecord decode_resize(std::span<const std::uint8_t> bytes) {
  return resize_bilinear(decode_image(bytes), kImageHeight, kImageWidth);
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> raw(image.pixels.size());
  std::transform(image.pixels.begin(), image.pixels.end(), raw.begin(), quantize);
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raw.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Image& image) {
  const std::string header =
      "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) out.push_back(quantize(v));
  return out;
}

std::string to_string(AugmentPolicy policy) {
  switch (policy) {
    case AugmentPolicy::none: return "none";
    case AugmentPolicy::mirror: return "mirror";
    case AugmentPolicy::mirror_rotate: return "mirror+rotate";
  }
  return "unknown";
}

AugmentPolicy parse_augment_policy(const std::string& text) {
  for (auto p : {AugmentPolicy::none, AugmentPolicy::mirror, AugmentPolicy::mirror_rotate}) {
    if (to_string(p) == text) return p;
  }
  throw ConfigError("unknown augmentation policy '" + text + "'");
}

Image mirror(const Image& image) {
  Image out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t c = 0; c < image.channels; ++c) {
        out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
      }
    }
  }
  return out;
}

Image rotate(const Image& image, double degrees) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta);
  const double sn = std::sin(theta);
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  Image out(image.height, image.width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      // Inverse mapping: rotate the output coordinate back into the source.
      const double src_x = cx + cs * dx + sn * dy;
      const double src_y = cy - sn * dx + cs * dy;
      sample_bilinear(image, src_y, src_x, &out.pixels[(y * image.width + x) * image.channels]);
    }
  }
  return out;
}

ImageRecord augment(const ImageRecord& record, AugmentPolicy policy, std::mt19937_64& rng) {
  if (policy == AugmentPolicy::none) return record;
  std::bernoulli_distribution flip(0.5);
  ImageRecord out = flip(rng) ? mirror(record) : record;
  if (policy == AugmentPolicy::mirror_rotate) {
    std::uniform_real_distribution<double> angle(-kMaxRotationDegrees, kMaxRotationDegrees);
    out = rotate(out, angle(rng));
  }
  return out;
}

template <typename T>
BasicTensor4<T> to_tensor(std::span<const ImageRecord* const> records) {
  if (records.empty()) throw ShapeError("to_tensor: no images");
  const std::size_t h = records.front()->height;
  const std::size_t w = records.front()->width;
  BasicTensor4<T> t(Shape4{records.size(), h, w, kImageChannels});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const ImageRecord& r = *records[i];
    if (r.height != h || r.width != w || r.channels != kImageChannels) {
      throw ShapeError("to_tensor: image " + std::to_string(i) + " has a different size");
    }
    std::copy(r.pixels.begin(), r.pixels.end(), t.sample(i).begin());
  }
  return t;
}

template BasicTensor4<float> to_tensor(std::span<const ImageRecord* const>);
template BasicTensor4<double> to_tensor(std::span<const ImageRecord* const>);

}  // namespace dhsl
