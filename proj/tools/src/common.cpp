#include "common.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

namespace faultformer::cli {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunManifest::RunManifest(std::string command, std::vector<std::string> argv)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      started_at_(utc_timestamp()),
      start_(std::chrono::steady_clock::now()) {}

void RunManifest::set_config(const KeyValues& config, std::optional<std::string> path) {
  config_ = config;
  config_path_ = std::move(path);
}

void RunManifest::add_artifact(const fs::path& path) {
  const std::string s = path.string();
  if (std::find(artifacts_.begin(), artifacts_.end(), s) == artifacts_.end()) artifacts_.push_back(s);
}

void RunManifest::write(const std::string& status, const std::string& message) {
  if (!out_dir_) return;
  Json j;
  j["command"] = command_;
  j["status"] = status;
  if (!message.empty()) j["message"] = message;
  j["config_path"] = config_path_ ? Json(*config_path_) : Json(nullptr);
  j["seed"] = seed_ ? Json(*seed_) : Json(nullptr);
  j["out_dir"] = out_dir_->string();
  j["started_at"] = started_at_;
  j["finished_at"] = utc_timestamp();
  j["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  j["argv"] = argv_;
  Json cfg = Json::object();
  for (const auto& [k, v] : config_) cfg[k] = v;
  j["config"] = cfg;
  std::vector<std::string> existing;
  for (const auto& a : artifacts_) {
    if (fs::exists(a)) existing.push_back(a);
  }
  j["artifacts"] = existing;
  for (const auto& [k, v] : extra_.items()) j[k] = v;
  fs::create_directories(*out_dir_);
  write_text(*out_dir_ / "manifest.json", j.dump(2) + "\n");
}

fs::path resolve_out_dir(const std::string& flag, const std::string& command) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FAULTFORMER_OUT_DIR"); env && *env) return fs::path(env) / command;
  return fs::path("runs") / command;
}

bool KeySchema::accepts(const std::string& key) const {
  if (keys.contains(key)) return true;
  for (const auto& p : prefixes) {
    if (key.size() > p.size() && key.compare(0, p.size(), p) == 0) return true;
  }
  return false;
}

KeyValues load_config(const std::optional<std::string>& path, const KeySchema& schema) {
  if (!path) return {};
  KeyValues kv = read_key_values_file(*path);
  for (const auto& [k, v] : kv) {
    if (!schema.accepts(k)) throw ConfigError("unknown key '" + k + "' in " + *path);
  }
  return kv;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ConfigError("failed while writing '" + path.string() + "'");
}

std::string kv_text(const KeyValues& kv) {
  std::ostringstream out;
  write_key_values(out, kv);
  return out.str();
}

const SignalDataset& DatasetDir::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "test") return test;
  throw ConfigError("unknown split '" + name + "' (expected train or test)");
}

namespace {

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void read_impulses(const fs::path& path, SignalDataset& train, SignalDataset& test) {
  train.impulse_times_s.assign(train.size(), {});
  test.impulse_times_s.assign(test.size(), {});
  std::ifstream in(path);
  if (!in) return;
  std::string line;
  std::getline(in, line);  // header
  std::size_t row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string split, row, time;
    if (!std::getline(fields, split, ',') || !std::getline(fields, row, ',') || !std::getline(fields, time)) {
      throw ParseError(path.string() + " row " + std::to_string(row_number) + ": expected split,row,time_s");
    }
    auto& d = split == "train" ? train : test;
    const std::size_t r = parse_index("row", row);
    if (r >= d.size()) {
      throw ParseError(path.string() + " row " + std::to_string(row_number) + ": sample index out of range");
    }
    d.impulse_times_s[r].push_back(std::stod(time));
  }
}

}  // namespace

DatasetDir load_dataset_dir(const fs::path& dir) {
  const fs::path meta_path = dir / "dataset.json";
  if (!fs::exists(meta_path)) {
    throw ConfigError("no dataset.json in '" + dir.string() + "' (create one with `synth`, or write it by hand)");
  }
  DatasetDir d;
  d.meta = read_json(meta_path);
  std::size_t length = 0;
  std::vector<std::string> names;
  try {
    length = d.meta.at("length").get<std::size_t>();
    names = d.meta.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(meta_path.string() + ": " + e.what());
  }
  const double rate = d.meta.value("sample_rate_hz", 12000.0);
  const bool normalized = d.meta.value("normalized", false);
  for (auto* part : {&d.train, &d.test}) {
    const std::string name = part == &d.train ? "train" : "test";
    *part = load_csv((dir / (name + ".csv")).string(), length, true, names.size());
    part->class_names = names;
    part->sample_rate_hz = rate;
    part->provenance = d.meta.value("provenance", "csv") == "synthetic" ? Provenance::synthetic : Provenance::csv;
    if (d.meta.contains("snr_db") && d.meta["snr_db"].is_number()) part->snr_db = d.meta["snr_db"].get<double>();
    if (!normalized) {
      for (std::size_t i = 0; i < part->size(); ++i) {
        auto row = minmax_normalize(part->sample(i));
        std::copy(row.begin(), row.end(), part->samples.begin() + static_cast<std::ptrdiff_t>(i * length));
      }
    }
  }
  read_impulses(dir / "impulses.csv", d.train, d.test);
  return d;
}

std::size_t parse_index(const std::string& key, const std::string& text) {
  KeyValues kv{{key, text}};
  return kv_size(kv, key, 0);
}

}  // namespace faultformer::cli
