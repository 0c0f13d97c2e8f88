#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dhsl/trainer.hpp"

namespace dhsl {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

constexpr char kMagic[4] = {'D', 'H', 'S', 'L'};
constexpr const char* kMomentumPrefix = "momentum:";

class Writer {
 public:
  template <typename U>
  void pod(U v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(U));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void floats(std::span<const float> v) {
    const auto* p = reinterpret_cast<const char*>(v.data());
    bytes_.insert(bytes_.end(), p, p + v.size_bytes());
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U pod() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint32_t>();
    need(n);
    std::string s(bytes_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  void floats(std::size_t at, std::span<float> out) const {
    const std::size_t n = out.size_bytes();
    if (at > bytes_.size() || bytes_.size() - at < n) throw FormatError("checkpoint tensor data truncated");
    std::memcpy(out.data(), bytes_.data() + at, n);
  }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
  }
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

struct TableEntry {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::uint64_t offset = 0;  // in floats from the start of the data block
  std::uint64_t count = 0;
};

std::string kv_text(const std::map<std::string, std::string>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

TrainConfig parse_config_text(const std::string& text) {
  TrainConfig config;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint config line without '='");
    try {
      if (!config.apply(line.substr(0, eq), line.substr(eq + 1))) {
        throw FormatError("checkpoint config has unknown key '" + line.substr(0, eq) + "'");
      }
    } catch (const ConfigError& e) {
      throw FormatError(std::string("checkpoint config: ") + e.what());
    }
  }
  return config;
}

}  // namespace

void save_checkpoint(Model<float>& model, const TrainConfig& config, const TrainerState* trainer,
                     const fs::path& path) {
  std::vector<TableEntry> table;
  std::vector<std::span<const float>> blocks;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const std::vector<std::size_t>& dims, std::span<const float> values) {
    table.push_back({name, {dims.begin(), dims.end()}, offset, values.size()});
    blocks.push_back(values);
    offset += values.size();
  };
  for (const auto& p : model.state()) add(p.name, p.dims, p.value);
  if (trainer != nullptr) {
    const auto& velocity = trainer->momentum.velocity;
    if (velocity.size() != model.num_learnable()) throw StateError("momentum state does not match the model");
    std::size_t at = 0;
    for (const auto& p : model.params()) {
      add(kMomentumPrefix + p.name, p.dims, std::span<const float>(velocity).subspan(at, p.value.size()));
      at += p.value.size();
    }
  }

  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod(kCheckpointVersion);
  w.str(kCheckpointLayout);
  w.pod(static_cast<std::uint64_t>(model.feature_dim()));
  w.pod(config.channel_multiplier);
  w.str(kv_text(config.to_kv()));
  w.str(trainer != nullptr ? trainer->to_text() : std::string());
  w.pod(static_cast<std::uint32_t>(table.size()));
  for (const auto& e : table) {
    w.str(e.name);
    w.pod(static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) w.pod(d);
    w.pod(e.offset);
    w.pod(e.count);
  }
  for (const auto& b : blocks) w.floats(b);

  // Write-then-rename so an interrupted save never clobbers the previous file.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  Reader r{std::vector<char>{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()}};

  for (char c : kMagic) {
    if (r.size() < 4 || r.pod<char>() != c) throw FormatError(path.string() + " is not a checkpoint (bad magic)");
  }
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported");
  }
  if (r.str() != kCheckpointLayout) throw FormatError("checkpoint layout tag mismatch");
  const auto d = r.pod<std::uint64_t>();
  const auto multiplier = r.pod<double>();
  TrainConfig config = parse_config_text(r.str());
  const std::string trainer_text = r.str();
  if (config.channel_multiplier != multiplier) {
    throw FormatError("checkpoint header and config disagree on the channel multiplier");
  }

  const auto count = r.pod<std::uint32_t>();
  std::map<std::string, TableEntry> table;
  for (std::uint32_t i = 0; i < count; ++i) {
    TableEntry e;
    e.name = r.str();
    const auto ndims = r.pod<std::uint32_t>();
    if (ndims > 8) throw FormatError("tensor " + e.name + " has too many dims");
    for (std::uint32_t k = 0; k < ndims; ++k) e.dims.push_back(r.pod<std::uint64_t>());
    e.offset = r.pod<std::uint64_t>();
    e.count = r.pod<std::uint64_t>();
    table[e.name] = e;
  }
  const std::size_t data_start = r.pos();

  StackConfig stack;
  try {
    stack = StackConfig::with_channel_multiplier(multiplier);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  Checkpoint ck{Model<float>(stack), config, std::nullopt};
  if (ck.model.feature_dim() != d) {
    throw FormatError("checkpoint feature dimension " + std::to_string(d) + " does not match the model (" +
                      std::to_string(ck.model.feature_dim()) + ")");
  }
  auto fetch = [&](const std::string& name, const std::vector<std::size_t>& dims, std::span<float> out) {
    const auto it = table.find(name);
    if (it == table.end()) throw FormatError("checkpoint lacks tensor " + name);
    const TableEntry& e = it->second;
    if (!std::equal(e.dims.begin(), e.dims.end(), dims.begin(), dims.end()) || e.count != out.size()) {
      throw FormatError("dimension mismatch for tensor " + name);
    }
    r.floats(data_start + e.offset * sizeof(float), out);
  };
  for (auto& p : ck.model.state()) fetch(p.name, p.dims, p.value);

  if (!trainer_text.empty()) {
    TrainerState state = TrainerState::from_text(trainer_text);
    state.momentum = MomentumState<float>(ck.model.num_learnable());
    std::size_t at = 0;
    for (auto& p : ck.model.params()) {
      fetch(kMomentumPrefix + p.name, p.dims, std::span<float>(state.momentum.velocity).subspan(at, p.value.size()));
      at += p.value.size();
    }
    ck.trainer = std::move(state);
  }
  return ck;
}

}  // namespace dhsl
