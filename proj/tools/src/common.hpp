#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultformer/config.hpp"
#include "faultformer/data.hpp"
#include "faultformer/errors.hpp"

namespace faultformer::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// A check the command itself performs came out negative (exit code 1).
class VerificationFailure : public Error {
 public:
  using Error::Error;
};

/// One record per command invocation, written as manifest.json in the output
/// directory.
class RunManifest {
 public:
  RunManifest(std::string command, std::vector<std::string> argv);

  void set_out_dir(const fs::path& dir) { out_dir_ = dir; }
  const std::optional<fs::path>& out_dir() const { return out_dir_; }
  void set_config(const KeyValues& config, std::optional<std::string> path);
  void set_seed(std::uint64_t seed) { seed_ = seed; }
  void add_artifact(const fs::path& path);
  void set_field(const std::string& key, Json value) { extra_[key] = std::move(value); }

  /// Writes manifest.json; does nothing when no output directory was set.
  void write(const std::string& status, const std::string& message = {});

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::string started_at_;
  std::chrono::steady_clock::time_point start_;
  std::optional<fs::path> out_dir_;
  std::optional<std::string> config_path_;
  KeyValues config_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::string> artifacts_;
  Json extra_ = Json::object();
};

std::string utc_timestamp();

/// --out when given, else $FAULTFORMER_OUT_DIR/<command>, else runs/<command>.
fs::path resolve_out_dir(const std::string& flag, const std::string& command);

/// Key set a command accepts from its config file.
struct KeySchema {
  std::set<std::string> keys;
  std::vector<std::string> prefixes;  // e.g. "class." for per-class entries

  bool accepts(const std::string& key) const;
};

/// Reads the config file (if any) and rejects keys outside `schema`.
KeyValues load_config(const std::optional<std::string>& path, const KeySchema& schema);

void write_text(const fs::path& path, const std::string& text);
std::string kv_text(const KeyValues& kv);

/// A dataset directory as written by `synth`: dataset.json plus train.csv and
/// test.csv (and an optional impulses.csv).
struct DatasetDir {
  SignalDataset train;
  SignalDataset test;
  Json meta;

  const SignalDataset& split(const std::string& name) const;
};

DatasetDir load_dataset_dir(const fs::path& dir);

std::size_t parse_index(const std::string& key, const std::string& text);

}  // namespace faultformer::cli
