#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "common.hpp"

namespace faultformer::cli {

/// A parsed command line: config file merged with flag overrides.
struct Invocation {
  std::string command;
  KeyValues kv;
  std::optional<std::string> config_path;
  fs::path out_dir;
  bool quiet = false;
};

KeySchema synth_schema();
KeySchema train_schema();
KeySchema eval_schema();
KeySchema reconstruct_schema();
KeySchema attention_schema();
KeySchema gradcheck_schema();

void cmd_synth(const Invocation& inv, RunManifest& manifest, std::ostream& out);
void cmd_train(const Invocation& inv, RunManifest& manifest, std::ostream& out);
void cmd_eval(const Invocation& inv, RunManifest& manifest, std::ostream& out);
void cmd_reconstruct(const Invocation& inv, RunManifest& manifest, std::ostream& out);
void cmd_attention(const Invocation& inv, RunManifest& manifest, std::ostream& out);
void cmd_gradcheck(const Invocation& inv, RunManifest& manifest, std::ostream& out);

}  // namespace faultformer::cli
