#include "dhsl/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace dhsl {

namespace {

std::size_t to_size(const std::string& key, const std::string& value) {
  if (value.empty() || value.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("key '" + key + "': '" + value + "' is not a non-negative integer");
  }
  return static_cast<std::size_t>(std::stoull(value));
}

double to_real(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size()) {
    throw ConfigError("key '" + key + "': '" + value + "' is not a number");
  }
  return v;
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Protocol RunConfig::protocol_spec() const {
  switch (protocol) {
    case ProtocolKind::grid: return Protocol::grid();
    case ProtocolKind::viper: return Protocol::viper();
    case ProtocolKind::cuhk03: return Protocol::cuhk03();
    case ProtocolKind::custom: return Protocol::custom(train_ids, test_ids, trials);
  }
  return Protocol::viper();
}

SynthConfig RunConfig::synth_spec() const {
  return {identities, per_id, cameras, distractors, difficulty, train.seed};
}

HeadMode RunConfig::head_mode() const {
  switch (metric) {
    case MetricKind::hybrid: return HeadMode::hybrid;
    case MetricKind::diff_only: return HeadMode::diff_only;
    case MetricKind::mult_only: return HeadMode::mult_only;
    default: break;
  }
  throw ConfigError("metric '" + to_string(metric) + "' has no trainable head; train with hybrid, diff-only or mult-only");
}

std::map<std::string, std::string> RunConfig::to_kv() const {
  auto kv = train.to_kv();
  kv.erase("head");  // follows from `metric`
  kv["data"] = data.string();
  kv["out"] = out.string();
  kv["checkpoints"] = checkpoints.string();
  kv["protocol"] = to_string(protocol);
  kv["train_ids"] = std::to_string(train_ids);
  kv["test_ids"] = std::to_string(test_ids);
  kv["trials"] = std::to_string(trials);
  kv["max_trials"] = std::to_string(max_trials);
  kv["metric"] = to_string(metric);
  kv["workers"] = std::to_string(workers);
  kv["format"] = to_string(format);
  kv["bins"] = std::to_string(bins);
  kv["checkpoint_every"] = std::to_string(checkpoint_every);
  kv["identities"] = std::to_string(identities);
  kv["per_id"] = std::to_string(per_id);
  kv["cameras"] = std::to_string(cameras);
  kv["distractors"] = std::to_string(distractors);
  kv["difficulty"] = real_text(difficulty);
  return kv;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : to_kv()) out += k + "=" + v + "\n";
  return out;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
  if (key == "head") throw ConfigError("unknown key 'head' (the head follows from 'metric')");
  if (train.apply(key, value)) return;
  if (key == "data") data = value;
  else if (key == "out") out = value;
  else if (key == "checkpoints") checkpoints = value;
  else if (key == "protocol") protocol = parse_protocol_kind(value);
  else if (key == "train_ids") train_ids = to_size(key, value);
  else if (key == "test_ids") test_ids = to_size(key, value);
  else if (key == "trials") trials = to_size(key, value);
  else if (key == "max_trials") max_trials = to_size(key, value);
  else if (key == "metric") {
    metric = parse_metric_kind(value);
    if (metric == MetricKind::hybrid || metric == MetricKind::diff_only || metric == MetricKind::mult_only) {
      train.head_mode = head_mode();
    }
  } else if (key == "workers") workers = to_size(key, value);
  else if (key == "format") format = parse_output_format(value);
  else if (key == "bins") bins = to_size(key, value);
  else if (key == "checkpoint_every") checkpoint_every = to_size(key, value);
  else if (key == "identities") identities = to_size(key, value);
  else if (key == "per_id") per_id = to_size(key, value);
  else if (key == "cameras") cameras = to_size(key, value);
  else if (key == "distractors") distractors = to_size(key, value);
  else if (key == "difficulty") difficulty = to_real(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_run_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    base.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& file, RunConfig base) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), std::move(base));
}

void write_run_config(const RunConfig& config, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << config.to_text();
  if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace dhsl
