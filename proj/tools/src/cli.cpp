#include "faultformer/cli.hpp"

#include <functional>
#include <map>
#include <ostream>

#include <CLI11.hpp>

#include "commands.hpp"

namespace faultformer::cli {

namespace {

struct FlagSpec {
  std::string flag;
  std::string key;
  std::string help;
};

using Handler = std::function<void(const Invocation&, RunManifest&, std::ostream&)>;

struct CommandSpec {
  std::string name;
  std::string description;
  KeySchema schema;
  std::vector<FlagSpec> flags;
  Handler handler;
  std::string footer;
};

const char* kEnvNote =
    "Output goes to --out, else $FAULTFORMER_OUT_DIR/<command>, else runs/<command>. Every run writes\n"
    "manifest.json there (command, config_path, seed, out_dir, started_at, finished_at, argv, resolved\n"
    "config, artifacts). Exit codes: 0 success, 1 verification failure, 2 configuration error,\n"
    "3 numerical failure.";

std::vector<CommandSpec> command_specs() {
  std::vector<FlagSpec> fresh_model = {
      {"--seed", "seed", "Initialization seed when no checkpoint is given"},
      {"--gamma", "gamma", "Reconstruction weight (fresh model)"},
      {"--blocks", "num_blocks", "Number of blocks (fresh model)"},
      {"--embed-channels", "embed_channels", "Embedding channels (fresh model)"},
      {"--ablation", "ablation", "none, non-msa, non-fft or non-farel (fresh model)"},
  };
  std::vector<FlagSpec> reconstruct_flags = {
      {"--checkpoint", "checkpoint", "Model checkpoint; omit for a freshly initialized model"},
      {"--data", "data", "Dataset directory (required)"},
      {"--split", "split", "train or test (default test)"},
      {"--index", "index", "Sample index within the split (default 0)"},
  };
  reconstruct_flags.insert(reconstruct_flags.end(), fresh_model.begin(), fresh_model.end());
  std::vector<FlagSpec> attention_flags = reconstruct_flags;
  attention_flags.push_back({"--block", "block", "1-based block index (default 4)"});
  attention_flags.push_back({"--layer", "layer", "1-based MSCAL layer index within the block (default 1)"});

  return {
      {"synth",
       "Generate a labelled synthetic vibration dataset",
       synth_schema(),
       {{"--preset", "preset", "Built-in class set (four-class)"},
        {"--per-class", "per_class", "Signals per class (default 100)"},
        {"--length", "length", "Samples per signal (default 2048)"},
        {"--sample-rate", "sample_rate", "Sampling rate in Hz (default 12000)"},
        {"--snr", "snr", "Noise level in dB; omit for clean signals"},
        {"--split", "split", "Train fraction per class (default 0.8)"},
        {"--seed", "seed", "Generator seed (default 0)"}},
       cmd_synth,
       "Config file: the keys above, or class.<i>.{name,kind,characteristic_hz,resonance_hz,decay_s,\n"
       "amplitude,shaft_hz,modulation_depth,shaft_amplitude} entries in place of a preset.\n"
       "Writes train.csv and test.csv (one signal per row, trailing integer label), impulses.csv\n"
       "(split,row,time_s), dataset.json (length, sample_rate_hz, class_names, normalized, snr_db,\n"
       "measured_snr_db, per-split class counts) and config.txt."},
      {"train",
       "Train a classifier on a dataset directory",
       train_schema(),
       {{"--data", "data", "Dataset directory (required)"},
        {"--ablation", "ablation", "none, non-msa, non-fft or non-farel"},
        {"--gamma", "gamma", "Reconstruction weight (default 0.1)"},
        {"--blocks", "num_blocks", "Number of blocks (default 4)"},
        {"--embed-channels", "embed_channels", "Embedding channels (default 32)"},
        {"--attention-axis", "attention_axis", "time or channel (default time)"},
        {"--epochs", "epochs", "Training epochs (default 200)"},
        {"--batch-size", "batch_size", "Mini-batch size (default 64)"},
        {"--lr", "learning_rate", "Adam learning rate (default 0.001)"},
        {"--seed", "seed", "Initialization and shuffling seed (default 0)"},
        {"--checkpoint-every", "checkpoint_every", "Checkpoint period in epochs; 0 disables (default 1)"}},
       cmd_train,
       "Config file: any model key (input_length, embed_channels, embed_kernel, num_blocks, ...) or\n"
       "training key (learning_rate, batch_size, epochs, seed, beta1, beta2, epsilon, checkpoint_every).\n"
       "Writes model.ckpt, report.json (per-epoch loss and accuracies, final accuracy, J1, J2,\n"
       "confusion; no timing), curves.csv (epoch,loss,train_acc,test_acc) and config.txt. On a\n"
       "non-finite loss exits 3 and leaves the last good model.ckpt in place."},
      {"eval",
       "Evaluate a checkpoint on a dataset split",
       eval_schema(),
       {{"--checkpoint", "checkpoint", "Model checkpoint (required)"},
        {"--data", "data", "Dataset directory (required)"},
        {"--split", "split", "train or test (default test)"},
        {"--batch-size", "batch_size", "Inference batch size (default 64)"}},
       cmd_eval,
       "Writes eval.json (accuracy, J1, J2, traces, confusion, class names) and confusion.csv\n"
       "(true_class,pred_0..pred_{C-1},total)."},
      {"reconstruct",
       "Dump the embedding's original and reconstructed signals and spectra",
       reconstruct_schema(),
       reconstruct_flags,
       cmd_reconstruct,
       "Writes time.csv (channel,index,original,reconstructed,original_norm,reconstructed_norm),\n"
       "time_mean.csv (channel-averaged), spectrum.csv (channel,bin,frequency_hz,original,\n"
       "reconstructed,original_norm,reconstructed_norm; magnitudes), spectrum_mean.csv, input.csv\n"
       "and filter.csv (channel,bin,frequency_hz,re,im,magnitude). _norm columns are min-max scaled."},
      {"attention",
       "Dump the channel-averaged attention map of one MSCAL layer",
       attention_schema(),
       attention_flags,
       cmd_attention,
       "Writes attention.csv (position,weight,input_sample) and attention.json (weights plus the\n"
       "sample's ground-truth impulse times)."},
      {"gradcheck",
       "Finite-difference check of every layer and block at small shapes",
       gradcheck_schema(),
       {{"--inject-fault", "inject_fault", "Sign-flip the backward rule of this op"},
        {"--tolerance", "tolerance", "Maximum relative error (default 1e-4)"},
        {"--step", "step", "Central-difference step (default 1e-5)"}},
       cmd_gradcheck,
       "Writes gradcheck.csv (component,max_rel_error,max_abs_error,probes,seconds,passed)."},
  };
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const VerificationFailure*>(&e)) return kVerificationFailure;
  if (dynamic_cast<const NumericError*>(&e)) return kNumericFailure;
  if (dynamic_cast<const Error*>(&e)) return kConfigError;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kConfigError;
  return kVerificationFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"faultformer: spectral-embedding transformer for vibration fault diagnosis"};
  app.require_subcommand(1);
  app.footer(kEnvNote);
  app.set_help_all_flag("--help-all", "Help for every command");

  auto specs = command_specs();
  struct Bound {
    std::map<std::string, std::string> values;  // key -> flag value
    std::map<std::string, CLI::Option*> options;
    std::string config;
    std::string out_dir;
    std::vector<std::string> components;
    bool quiet = false;
    CLI::Option* config_option = nullptr;
    CLI::App* app = nullptr;
  };
  std::vector<Bound> bound(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& spec = specs[i];
    auto& b = bound[i];
    b.app = app.add_subcommand(spec.name, spec.description);
    b.app->footer(spec.footer);
    b.config_option = b.app->add_option("--config", b.config, "Key-value config file (key = value per line)")->type_name("FILE");
    b.app->add_option("--out", b.out_dir, "Output directory")->type_name("DIR");
    b.app->add_flag("--quiet", b.quiet, "Less console output");
    for (const auto& f : spec.flags) {
      b.options[f.key] = b.app->add_option(f.flag, b.values[f.key], f.help)->type_name("VALUE");
    }
    if (spec.name == "gradcheck") {
      b.app->add_option("--component", b.components, "Run only these components (repeatable)")->type_name("NAME");
    }
  }

  std::vector<std::string> argv{"faultformer"};
  argv.insert(argv.end(), args.begin(), args.end());
  std::vector<const char*> cargv;
  for (const auto& a : argv) cargv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kConfigError;
  }

  for (std::size_t i = 0; i < specs.size(); ++i) {
    auto& b = bound[i];
    if (!b.app->parsed()) continue;
    const auto& spec = specs[i];
    RunManifest manifest(spec.name, args);
    try {
      Invocation inv;
      inv.command = spec.name;
      inv.quiet = b.quiet;
      if (b.config_option->count() > 0) inv.config_path = b.config;
      inv.out_dir = resolve_out_dir(b.out_dir, spec.name);
      manifest.set_out_dir(inv.out_dir);
      inv.kv = load_config(inv.config_path, spec.schema);
      for (const auto& [key, option] : b.options) {
        if (option->count() > 0) inv.kv[key] = b.values[key];
      }
      if (!b.components.empty()) {
        std::string joined;
        for (const auto& c : b.components) joined += (joined.empty() ? "" : ",") + c;
        inv.kv["components"] = joined;
      }
      manifest.set_config(inv.kv, inv.config_path);
      spec.handler(inv, manifest, out);
      manifest.write("ok");
      return kSuccess;
    } catch (const std::exception& e) {
      const int code = exit_code_for(e);
      err << "error: " << e.what() << "\n";
      try {
        manifest.write(code == kNumericFailure ? "numeric_failure"
                       : code == kVerificationFailure ? "verification_failure"
                                                      : "config_error",
                       e.what());
      } catch (const std::exception& inner) {
        err << "error: could not write manifest: " << inner.what() << "\n";
      }
      return code;
    }
  }
  return kConfigError;
}

}  // namespace faultformer::cli
