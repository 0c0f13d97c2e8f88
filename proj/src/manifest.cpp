#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dhsl/data.hpp"

namespace dhsl {

namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" || ext == ".ppm";
}

bool parse_int(std::string_view text, int& out) {
  if (text.empty()) return false;
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) parts.push_back(part);
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "1" || s == "true") {
    out = true;
    return true;
  }
  if (s == "0" || s == "false") {
    out = false;
    return true;
  }
  return false;
}

void validate(const DatasetManifest& manifest) {
  for (const auto& e : manifest.entries) {
    if (e.is_distractor != (e.identity == kDistractorIdentity)) {
      throw DataError("manifest entry " + e.path +
                      ": distractors must use the reserved identity and vice versa");
    }
  }
}

}  // namespace

std::vector<int> DatasetManifest::identities() const {
  std::set<int> ids;
  for (const auto& e : entries) {
    if (!e.is_distractor) ids.insert(e.identity);
  }
  return {ids.begin(), ids.end()};
}

std::vector<std::size_t> DatasetManifest::distractor_indices() const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].is_distractor) idx.push_back(i);
  }
  return idx;
}

DatasetManifest DatasetManifest::filter_identities(std::span<const int> ids,
                                                   bool keep_distractors) const {
  const std::set<int> keep(ids.begin(), ids.end());
  DatasetManifest out{name, root, {}};
  for (const auto& e : entries) {
    if (e.is_distractor ? keep_distractors : keep.count(e.identity) > 0) out.entries.push_back(e);
  }
  return out;
}

ManifestSubset subset(const DatasetManifest& manifest, std::span<const int> ids, bool keep_distractors) {
  const std::set<int> keep(ids.begin(), ids.end());
  ManifestSubset out{{manifest.name, manifest.root, {}}, {}};
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.is_distractor ? keep_distractors : keep.count(e.identity) > 0) {
      out.manifest.entries.push_back(e);
      out.source_indices.push_back(i);
    }
  }
  return out;
}

ManifestEntry parse_entry_filename(const std::string& filename) {
  const fs::path p(filename);
  const std::string stem = p.stem().string();
  const auto parts = split(stem, '_');
  if (parts.size() != 3) {
    throw DataError("cannot parse dataset filename '" + filename +
                    "': expected <identity>_<camera>_<index>.<ext>");
  }
  ManifestEntry entry;
  entry.path = filename;
  std::string cam = parts[1];
  if (!cam.empty() && (cam[0] == 'c' || cam[0] == 'C')) cam.erase(0, 1);
  int index = 0;
  if (!parse_int(cam, entry.camera) || entry.camera < 0 || !parse_int(parts[2], index)) {
    throw DataError("cannot parse dataset filename '" + filename + "': bad camera or index");
  }
  if (parts[0] == "bg") {
    entry.identity = kDistractorIdentity;
    entry.is_distractor = true;
  } else if (!parse_int(parts[0], entry.identity) || entry.identity < 0) {
    throw DataError("cannot parse dataset filename '" + filename + "': bad identity");
  }
  return entry;
}

DatasetManifest load_manifest(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset directory " + root.string() + " not found");
  std::vector<std::string> names;
  for (const auto& item : fs::directory_iterator(root)) {
    if (item.is_regular_file() && has_image_extension(item.path())) {
      names.push_back(item.path().filename().string());
    }
  }
  if (names.empty()) throw DataError("dataset directory " + root.string() + " holds no images");
  std::sort(names.begin(), names.end());
  DatasetManifest manifest{root.filename().string(), root, {}};
  manifest.entries.reserve(names.size());
  for (const auto& n : names) manifest.entries.push_back(parse_entry_filename(n));
  return manifest;
}

DatasetManifest load_manifest_file(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest " + file.string());
  DatasetManifest manifest{file.stem().string(), file.parent_path(), {}};
  const bool jsonl = file.extension() == ".jsonl";
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    ManifestEntry e;
    const std::string where = file.string() + ":" + std::to_string(line_no);
    if (jsonl) {
      try {
        const auto j = nlohmann::json::parse(line);
        e.path = j.at("path").get<std::string>();
        e.identity = j.at("identity").get<int>();
        e.camera = j.at("camera").get<int>();
        e.is_distractor = j.value("is_distractor", false);
      } catch (const nlohmann::json::exception& ex) {
        throw DataError(where + ": " + ex.what());
      }
    } else {
      const auto f = split(line, '\t');
      if (f.size() != 4 || !parse_int(f[1], e.identity) || !parse_int(f[2], e.camera) ||
          !parse_bool(f[3], e.is_distractor)) {
        throw DataError(where + ": expected path<TAB>identity<TAB>camera<TAB>is_distractor");
      }
      e.path = f[0];
    }
    manifest.entries.push_back(std::move(e));
  }
  if (manifest.entries.empty()) throw DataError("manifest " + file.string() + " is empty");
  validate(manifest);
  return manifest;
}

DatasetManifest open_dataset(const fs::path& path) {
  return fs::is_directory(path) ? load_manifest(path) : load_manifest_file(path);
}

void write_manifest_tsv(const DatasetManifest& manifest, const fs::path& file) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + file.string());
  for (const auto& e : manifest.entries) {
    out << e.path << '\t' << e.identity << '\t' << e.camera << '\t' << (e.is_distractor ? 1 : 0)
        << '\n';
  }
  if (!out) throw IoError("failed writing manifest " + file.string());
}

std::vector<ImageRecord> load_images(const DatasetManifest& manifest) {
  std::vector<ImageRecord> images;
  images.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) {
    const auto bytes = read_file(manifest.root / e.path);
    try {
      images.push_back(decode_resize(bytes));
    } catch (const DataError& ex) {
      throw DataError(e.path + ": " + ex.what());
    }
  }
  return images;
}

}  // namespace dhsl
