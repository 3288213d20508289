#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "faultformer/checkpoint.hpp"
#include "faultformer/gradcheck_suite.hpp"
#include "faultformer/model.hpp"
#include "faultformer/spectral.hpp"
#include "faultformer/train.hpp"

namespace faultformer::cli {

namespace {

std::set<std::string> model_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : ModelConfig{}.to_key_values()) keys.insert(k);
  return keys;
}

std::set<std::string> train_keys() {
  std::set<std::string> keys;
  for (const auto& [k, v] : TrainConfig{}.to_key_values()) keys.insert(k);
  return keys;
}

bool has(const KeyValues& kv, const std::string& key) { return kv.find(key) != kv.end(); }

std::string require(const KeyValues& kv, const std::string& key, const std::string& flag) {
  auto it = kv.find(key);
  if (it == kv.end() || it->second.empty()) throw ConfigError("missing required " + flag + " (config key '" + key + "')");
  return it->second;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

void save_artifact(RunManifest& manifest, const fs::path& path, const std::string& text) {
  write_text(path, text);
  manifest.add_artifact(path);
}

// ---- synth ----------------------------------------------------------------

const std::vector<std::string> kClassFields = {"name",     "kind",    "characteristic_hz", "resonance_hz",
                                               "decay_s",  "amplitude", "shaft_hz",        "modulation_depth",
                                               "shaft_amplitude"};

std::vector<FaultSpec> class_specs(const KeyValues& kv) {
  std::map<std::size_t, KeyValues> per_class;
  for (const auto& [key, value] : kv) {
    if (key.rfind("class.", 0) != 0) continue;
    const auto dot = key.find('.', 6);
    if (dot == std::string::npos) throw ConfigError("malformed class key '" + key + "' (expected class.<i>.<field>)");
    const std::size_t index = parse_index(key, key.substr(6, dot - 6));
    const std::string field = key.substr(dot + 1);
    if (std::find(kClassFields.begin(), kClassFields.end(), field) == kClassFields.end()) {
      throw ConfigError("unknown class field '" + field + "' in '" + key + "'");
    }
    per_class[index][field] = value;
  }
  std::vector<FaultSpec> specs;
  for (const auto& [index, fields] : per_class) {
    if (index != specs.size()) throw ConfigError("class indices must run 0,1,2,... without gaps");
    const std::string prefix = "class." + std::to_string(index);
    FaultSpec s;
    s.kind = parse_fault_kind(require(fields, "kind", prefix + ".kind"));
    s.name = kv_string(fields, "name", to_string(s.kind));
    s.characteristic_hz = kv_double(fields, "characteristic_hz", s.characteristic_hz);
    s.resonance_hz = kv_double(fields, "resonance_hz", s.resonance_hz);
    s.decay_s = kv_double(fields, "decay_s", s.decay_s);
    s.amplitude = kv_double(fields, "amplitude", s.amplitude);
    s.shaft_hz = kv_double(fields, "shaft_hz", s.shaft_hz);
    s.modulation_depth = kv_double(fields, "modulation_depth", s.modulation_depth);
    s.shaft_amplitude = kv_double(fields, "shaft_amplitude", s.shaft_amplitude);
    specs.push_back(s);
  }
  return specs;
}

KeyValues class_key_values(const std::vector<FaultSpec>& specs) {
  KeyValues kv;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    const std::string p = "class." + std::to_string(i) + ".";
    kv[p + "name"] = s.name;
    kv[p + "kind"] = to_string(s.kind);
    kv[p + "characteristic_hz"] = format_double(s.characteristic_hz);
    kv[p + "resonance_hz"] = format_double(s.resonance_hz);
    kv[p + "decay_s"] = format_double(s.decay_s);
    kv[p + "amplitude"] = format_double(s.amplitude);
    kv[p + "shaft_hz"] = format_double(s.shaft_hz);
    kv[p + "modulation_depth"] = format_double(s.modulation_depth);
    kv[p + "shaft_amplitude"] = format_double(s.shaft_amplitude);
  }
  return kv;
}

Json split_summary(const SignalDataset& d) {
  Json j;
  j["rows"] = d.size();
  j["class_counts"] = d.class_counts();
  return j;
}

// ---- models ---------------------------------------------------------------

KeyValues header_extra(const DatasetDir& data, std::size_t epoch, std::uint64_t seed) {
  return {{"class_names", join(data.train.class_names, ",")},
          {"epoch", std::to_string(epoch)},
          {"sample_rate_hz", format_double(data.train.sample_rate_hz)},
          {"seed", std::to_string(seed)}};
}

// Fills input_length and num_classes from the data; explicit values that
// disagree are rejected.
ModelConfig model_config_for(const KeyValues& kv, const SignalDataset& data) {
  ModelConfig base;
  base.input_length = data.length;
  base.num_classes = data.num_classes();
  ModelConfig c = ModelConfig::from_key_values(kv, base);
  if (c.input_length != data.length) {
    throw DimensionError("input_length mismatch: config asks for " + std::to_string(c.input_length) +
                         " samples per signal, dataset has " + std::to_string(data.length));
  }
  if (c.num_classes != data.num_classes()) {
    throw DimensionError("num_classes mismatch: config asks for " + std::to_string(c.num_classes) +
                         ", dataset has " + std::to_string(data.num_classes()));
  }
  return c;
}

void check_compatible(const Model& model, const SignalDataset& data) {
  const auto& c = model.config();
  if (c.input_length != data.length) {
    throw DimensionError("input_length mismatch: checkpoint expects " + std::to_string(c.input_length) +
                         " samples per signal, dataset has " + std::to_string(data.length));
  }
  if (c.num_classes != data.num_classes()) {
    throw DimensionError("num_classes mismatch: checkpoint has " + std::to_string(c.num_classes) +
                         " output classes, dataset has " + std::to_string(data.num_classes()));
  }
}

// A trained checkpoint when --checkpoint is given, else a freshly initialized
// model described by the model keys.
Model load_or_build(const Invocation& inv, const SignalDataset& data, RunManifest& manifest) {
  const auto& kv = inv.kv;
  if (has(kv, "checkpoint")) {
    for (const auto& key : model_keys()) {
      if (has(kv, key)) throw ConfigError("'" + key + "' only applies to a fresh model; drop it or --checkpoint");
    }
    auto loaded = load_checkpoint(kv.at("checkpoint"));
    check_compatible(loaded.model, data);
    return std::move(loaded.model);
  }
  const std::uint64_t seed = kv_u64(kv, "seed", 0);
  manifest.set_seed(seed);
  return build_variant(model_config_for(kv, data), seed);
}

Tensor sample_tensor(const SignalDataset& data, std::size_t index) {
  if (index >= data.size()) {
    throw ConfigError("sample index " + std::to_string(index) + " out of range 0.." + std::to_string(data.size() - 1));
  }
  const std::size_t row = index;
  return data.batch(std::span<const std::size_t>(&row, 1));
}

std::vector<double> normalized(std::span<const double> x) { return minmax_normalize(x); }

void print_eval(std::ostream& out, const EvalResult& r, const std::vector<std::string>& names) {
  out << "accuracy: " << fmt(r.accuracy, 2) << "%\n";
  out << "J1: " << format_double(r.scatter.j1) << "\n";
  out << "J2: " << format_double(r.scatter.j2) << "  (tr(Sw + Sb) / tr(Sw) = 1 + J1)\n";
  out << "J2 alt: " << format_double(r.scatter.j2_alt) << "  (tr(Sw + Sb) / tr(Sb))\n";
  if (r.scatter.capped) out << "note: within-class trace hit the floor; J1/J2 are capped\n";
  out << "confusion (rows true, columns predicted):\n";
  std::size_t width = 6;
  for (const auto& n : names) width = std::max(width, n.size() + 1);
  out << std::setw(static_cast<int>(width)) << "";
  for (std::size_t c = 0; c < names.size(); ++c) out << std::setw(8) << c;
  out << "\n";
  for (std::size_t t = 0; t < r.confusion.size(); ++t) {
    out << std::left << std::setw(static_cast<int>(width)) << names[t] << std::right;
    for (auto v : r.confusion[t]) out << std::setw(8) << v;
    out << "\n";
  }
}

}  // namespace

KeySchema synth_schema() {
  return {{"preset", "per_class", "length", "sample_rate", "snr", "split", "seed"}, {"class."}};
}

KeySchema train_schema() {
  KeySchema s{{"data"}, {}};
  for (auto k : model_keys()) s.keys.insert(k);
  for (auto k : train_keys()) s.keys.insert(k);
  return s;
}

KeySchema eval_schema() { return {{"checkpoint", "data", "split", "batch_size"}, {}}; }

KeySchema reconstruct_schema() {
  KeySchema s{{"checkpoint", "data", "split", "index", "seed"}, {}};
  for (auto k : model_keys()) s.keys.insert(k);
  return s;
}

KeySchema attention_schema() {
  KeySchema s = reconstruct_schema();
  s.keys.insert({"block", "layer"});
  return s;
}

KeySchema gradcheck_schema() {
  return {{"step", "tolerance", "abs_floor", "magnitude_floor", "seed", "max_probes", "inject_fault", "components"}, {}};
}

void cmd_synth(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  std::vector<FaultSpec> specs = class_specs(kv);
  KeyValues resolved;
  if (specs.empty()) {
    std::string preset = kv_string(kv, "preset", "four-class");
    std::replace(preset.begin(), preset.end(), '_', '-');
    if (preset != "four-class") throw ConfigError("unknown preset '" + preset + "' (available: four-class)");
    specs = four_class_preset();
    resolved["preset"] = preset;
  } else {
    if (has(kv, "preset")) throw ConfigError("give either a preset or class.<i>.* entries, not both");
    resolved = class_key_values(specs);
  }

  DatasetOptions opt;
  opt.per_class = kv_size(kv, "per_class", opt.per_class);
  opt.length = kv_size(kv, "length", opt.length);
  opt.sample_rate_hz = kv_double(kv, "sample_rate", opt.sample_rate_hz);
  opt.split_ratio = kv_double(kv, "split", opt.split_ratio);
  opt.seed = kv_u64(kv, "seed", opt.seed);
  const std::string snr = kv_string(kv, "snr", "none");
  if (snr != "none" && !snr.empty()) opt.snr_db = kv_double(kv, "snr", 0.0);
  if (opt.length < 2) throw ConfigError("length must be at least 2");

  resolved["per_class"] = std::to_string(opt.per_class);
  resolved["length"] = std::to_string(opt.length);
  resolved["sample_rate"] = format_double(opt.sample_rate_hz);
  resolved["split"] = format_double(opt.split_ratio);
  resolved["seed"] = std::to_string(opt.seed);
  resolved["snr"] = opt.snr_db ? format_double(*opt.snr_db) : "none";
  manifest.set_config(resolved, inv.config_path);
  manifest.set_seed(opt.seed);

  DatasetSplit split = make_dataset(specs, opt);

  fs::create_directories(inv.out_dir);
  for (const auto* d : {&split.train, &split.test}) {
    const fs::path path = inv.out_dir / (d == &split.train ? "train.csv" : "test.csv");
    save_csv(path.string(), *d);
    manifest.add_artifact(path);
  }
  std::ostringstream impulses;
  impulses << "split,row,time_s\n";
  for (const auto* d : {&split.train, &split.test}) {
    const char* name = d == &split.train ? "train" : "test";
    for (std::size_t r = 0; r < d->size(); ++r) {
      for (double t : d->impulse_times_s[r]) impulses << name << ',' << r << ',' << format_double(t) << '\n';
    }
  }
  save_artifact(manifest, inv.out_dir / "impulses.csv", impulses.str());

  Json meta;
  meta["length"] = opt.length;
  meta["sample_rate_hz"] = opt.sample_rate_hz;
  meta["class_names"] = split.train.class_names;
  meta["normalized"] = true;
  meta["provenance"] = "synthetic";
  meta["seed"] = opt.seed;
  meta["snr_db"] = opt.snr_db ? Json(*opt.snr_db) : Json(nullptr);
  meta["measured_snr_db"] = split.train.measured_snr_db ? Json(*split.train.measured_snr_db) : Json(nullptr);
  meta["train"] = split_summary(split.train);
  meta["test"] = split_summary(split.test);
  save_artifact(manifest, inv.out_dir / "dataset.json", meta.dump(2) + "\n");
  save_artifact(manifest, inv.out_dir / "config.txt", kv_text(resolved));

  const auto train_counts = split.train.class_counts();
  const auto test_counts = split.test.class_counts();
  out << std::left << std::setw(14) << "class" << std::right << std::setw(8) << "train" << std::setw(8) << "test"
      << "\n";
  for (std::size_t c = 0; c < specs.size(); ++c) {
    out << std::left << std::setw(14) << split.train.class_names[c] << std::right << std::setw(8) << train_counts[c]
        << std::setw(8) << test_counts[c] << "\n";
  }
  out << std::left << std::setw(14) << "total" << std::right << std::setw(8) << split.train.size() << std::setw(8)
      << split.test.size() << "\n";
  if (opt.snr_db) {
    out << "SNR: requested " << format_double(*opt.snr_db) << " dB, measured " << fmt(*split.train.measured_snr_db, 3)
        << " dB (mean over " << specs.size() * opt.per_class << " signals)\n";
  } else {
    out << "SNR: clean signals, no noise injected\n";
  }
  out << "wrote " << inv.out_dir.string() << "\n";
}

void cmd_train(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  const fs::path data_dir = require(kv, "data", "--data");
  DatasetDir data = load_dataset_dir(data_dir);

  const ModelConfig mc = model_config_for(kv, data.train);
  TrainConfig base;
  base.checkpoint_every = 1;
  const TrainConfig tc = TrainConfig::from_key_values(kv, base);
  tc.validate();

  KeyValues resolved = mc.to_key_values();
  for (const auto& [k, v] : tc.to_key_values()) resolved[k] = v;
  resolved["data"] = data_dir.string();
  manifest.set_config(resolved, inv.config_path);
  manifest.set_seed(tc.seed);

  Model model = build_variant(mc, tc.seed);
  fs::create_directories(inv.out_dir);
  save_artifact(manifest, inv.out_dir / "config.txt", kv_text(resolved));

  const fs::path ckpt = inv.out_dir / "model.ckpt";
  std::optional<std::size_t> last_good;
  auto checkpoint = [&](std::size_t epoch) {
    save_checkpoint(ckpt.string(), model, header_extra(data, epoch, tc.seed));
    manifest.add_artifact(ckpt);
    last_good = epoch;
  };
  if (tc.checkpoint_every > 0) checkpoint(0);

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochStats& s) {
    if (inv.quiet) return;
    out << "epoch " << s.epoch << "/" << tc.epochs << "  loss " << fmt(s.loss) << "  train " << fmt(s.train_accuracy, 2)
        << "%  test " << fmt(s.test_accuracy, 2) << "%\n"
        << std::flush;
  };
  hooks.on_checkpoint = checkpoint;

  if (!inv.quiet) {
    out << "model: " << to_string(mc.ablation) << ", " << mc.num_blocks << " blocks, " << mc.embed_channels
        << " embed channels, gamma " << format_double(mc.gamma) << ", " << model.parameter_count() << " parameters\n";
    out << "data: " << data.train.size() << " train / " << data.test.size() << " test, length " << data.train.length
        << "\n";
  }

  TrainReport report;
  try {
    report = train(model, data.train, data.test, tc, hooks);
  } catch (const NumericError& e) {
    manifest.set_field("last_good_epoch", last_good ? Json(*last_good) : Json(nullptr));
    std::string msg = e.what();
    msg += last_good ? "; last good checkpoint (epoch " + std::to_string(*last_good) + ") kept at " + ckpt.string()
                     : "; no checkpoint was written before the failure";
    throw NumericError(msg);
  }
  checkpoint(tc.epochs);
  report.config = resolved;
  save_artifact(manifest, inv.out_dir / "report.json", report.to_json(false) + "\n");
  save_artifact(manifest, inv.out_dir / "curves.csv", report.curves_csv());
  manifest.set_field("train_wall_clock_s", report.wall_clock_s);

  out << "final test accuracy: " << fmt(report.final_eval.accuracy, 2) << "%  J1 "
      << format_double(report.final_eval.scatter.j1) << "  J2 " << format_double(report.final_eval.scatter.j2) << "\n";
  out << "trained in " << fmt(report.wall_clock_s, 1) << " s; wrote " << inv.out_dir.string() << "\n";
}

void cmd_eval(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  const std::string ckpt_path = require(kv, "checkpoint", "--checkpoint");
  const fs::path data_dir = require(kv, "data", "--data");
  const std::string split_name = kv_string(kv, "split", "test");
  const std::size_t batch = kv_size(kv, "batch_size", 64);
  if (batch == 0) throw ConfigError("batch_size must be positive");
  manifest.set_config({{"checkpoint", ckpt_path}, {"data", data_dir.string()}, {"split", split_name},
                       {"batch_size", std::to_string(batch)}},
                      inv.config_path);

  auto loaded = load_checkpoint(ckpt_path);
  DatasetDir data = load_dataset_dir(data_dir);
  const SignalDataset& set = data.split(split_name);
  check_compatible(loaded.model, set);

  const EvalResult r = evaluate(loaded.model, set, batch);
  print_eval(out, r, set.class_names);

  fs::create_directories(inv.out_dir);
  save_artifact(manifest, inv.out_dir / "eval.json", eval_to_json(r, set.class_names) + "\n");
  save_artifact(manifest, inv.out_dir / "confusion.csv", confusion_csv(r));
  manifest.set_field("accuracy", r.accuracy);
}

void cmd_reconstruct(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  const fs::path data_dir = require(kv, "data", "--data");
  const std::string split_name = kv_string(kv, "split", "test");
  const std::size_t index = kv_size(kv, "index", 0);
  DatasetDir data = load_dataset_dir(data_dir);
  const SignalDataset& set = data.split(split_name);
  Model model = load_or_build(inv, set, manifest);
  KeyValues resolved = kv;
  resolved["data"] = data_dir.string();
  resolved["split"] = split_name;
  resolved["index"] = std::to_string(index);
  if (!has(kv, "checkpoint")) {
    for (const auto& [k, v] : model.config().to_key_values()) resolved[k] = v;
    resolved["seed"] = std::to_string(kv_u64(kv, "seed", 0));
  }
  manifest.set_config(resolved, inv.config_path);

  const Tensor x = sample_tensor(set, index);
  model.set_training(false);
  ForwardTrace trace;
  {
    NoGradGuard guard;
    model.forward(x, &trace);
  }
  const Tensor& orig = trace.embed_conv;
  const Tensor& recon = trace.embed_output;
  const std::size_t channels = orig.dim(1);
  const std::size_t length = orig.dim(2);
  const double rate = set.sample_rate_hz;

  // Channel-averaged signals in time, and magnitudes averaged over channels.
  std::vector<double> mean_orig(length, 0.0), mean_recon(length, 0.0);
  const ComplexSpectrum so = rdft(orig.detach());
  const ComplexSpectrum sr = rdft(recon.detach());
  const std::size_t bins = so.bins();
  std::vector<double> mag_orig(bins, 0.0), mag_recon(bins, 0.0);

  std::ostringstream time_csv, spec_csv;
  time_csv << "channel,index,original,reconstructed,original_norm,reconstructed_norm\n";
  spec_csv << "channel,bin,frequency_hz,original,reconstructed,original_norm,reconstructed_norm\n";
  double diff_sq = 0.0, ref_sq = 0.0;
  for (std::size_t c = 0; c < channels; ++c) {
    auto o = orig.data().subspan(c * length, length);
    auto r = recon.data().subspan(c * length, length);
    const auto on = normalized(o);
    const auto rn = normalized(r);
    for (std::size_t t = 0; t < length; ++t) {
      time_csv << c << ',' << t << ',' << format_double(o[t]) << ',' << format_double(r[t]) << ','
               << format_double(on[t]) << ',' << format_double(rn[t]) << '\n';
      mean_orig[t] += o[t] / static_cast<double>(channels);
      mean_recon[t] += r[t] / static_cast<double>(channels);
      diff_sq += (r[t] - o[t]) * (r[t] - o[t]);
      ref_sq += o[t] * o[t];
    }
    std::vector<double> mo(bins), mr(bins);
    for (std::size_t k = 0; k < bins; ++k) {
      mo[k] = so.magnitude(c, k);
      mr[k] = sr.magnitude(c, k);
      mag_orig[k] += mo[k] / static_cast<double>(channels);
      mag_recon[k] += mr[k] / static_cast<double>(channels);
    }
    const auto mon = normalized(mo);
    const auto mrn = normalized(mr);
    for (std::size_t k = 0; k < bins; ++k) {
      spec_csv << c << ',' << k << ',' << format_double(static_cast<double>(k) * rate / static_cast<double>(length))
               << ',' << format_double(mo[k]) << ',' << format_double(mr[k]) << ',' << format_double(mon[k]) << ','
               << format_double(mrn[k]) << '\n';
    }
  }

  std::ostringstream time_mean, spec_mean;
  time_mean << "index,original,reconstructed,original_norm,reconstructed_norm\n";
  const auto mon = normalized(mean_orig);
  const auto mrn = normalized(mean_recon);
  for (std::size_t t = 0; t < length; ++t) {
    time_mean << t << ',' << format_double(mean_orig[t]) << ',' << format_double(mean_recon[t]) << ','
              << format_double(mon[t]) << ',' << format_double(mrn[t]) << '\n';
  }
  spec_mean << "bin,frequency_hz,original,reconstructed,original_norm,reconstructed_norm\n";
  const auto smo = normalized(mag_orig);
  const auto smr = normalized(mag_recon);
  for (std::size_t k = 0; k < bins; ++k) {
    spec_mean << k << ',' << format_double(static_cast<double>(k) * rate / static_cast<double>(length)) << ','
              << format_double(mag_orig[k]) << ',' << format_double(mag_recon[k]) << ',' << format_double(smo[k]) << ','
              << format_double(smr[k]) << '\n';
  }

  fs::create_directories(inv.out_dir);
  save_artifact(manifest, inv.out_dir / "time.csv", time_csv.str());
  save_artifact(manifest, inv.out_dir / "time_mean.csv", time_mean.str());
  save_artifact(manifest, inv.out_dir / "spectrum.csv", spec_csv.str());
  save_artifact(manifest, inv.out_dir / "spectrum_mean.csv", spec_mean.str());

  std::ostringstream input_csv;
  input_csv << "index,value\n";
  const auto signal = set.sample(index);
  for (std::size_t t = 0; t < signal.size(); ++t) input_csv << t << ',' << format_double(signal[t]) << '\n';
  save_artifact(manifest, inv.out_dir / "input.csv", input_csv.str());

  const auto& filter = model.embedding().filter;
  if (filter) {
    std::ostringstream filter_csv;
    filter_csv << "channel,bin,frequency_hz,re,im,magnitude\n";
    auto re = filter->re.data();
    auto im = filter->im.data();
    for (std::size_t c = 0; c < filter->channels(); ++c) {
      for (std::size_t k = 0; k < filter->bins(); ++k) {
        const double a = re[c * filter->bins() + k];
        const double b = im[c * filter->bins() + k];
        filter_csv << c << ',' << k << ','
                   << format_double(static_cast<double>(k) * rate / static_cast<double>(length)) << ','
                   << format_double(a) << ',' << format_double(b) << ',' << format_double(std::hypot(a, b)) << '\n';
      }
    }
    save_artifact(manifest, inv.out_dir / "filter.csv", filter_csv.str());
  }

  const double rel = ref_sq > 0.0 ? std::sqrt(diff_sq / ref_sq) : 0.0;
  out << "sample " << index << " (" << split_name << ", class " << set.class_names[set.labels[index]] << "): "
      << channels << " channels x " << length << " samples, " << bins << " bins\n";
  out << "||reconstructed - original|| / ||original|| = " << format_double(rel) << "\n";
  if (!filter) out << "embedding has no spectral filter (non-farel variant); reconstructed equals original\n";
  out << "wrote " << inv.out_dir.string() << "\n";
}

void cmd_attention(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  const fs::path data_dir = require(kv, "data", "--data");
  const std::string split_name = kv_string(kv, "split", "test");
  const std::size_t index = kv_size(kv, "index", 0);
  const std::size_t block = kv_size(kv, "block", 4);
  const std::size_t layer = kv_size(kv, "layer", 1);
  if (block == 0 || layer == 0) throw ConfigError("block and layer are 1-based");
  DatasetDir data = load_dataset_dir(data_dir);
  const SignalDataset& set = data.split(split_name);
  Model model = load_or_build(inv, set, manifest);
  KeyValues resolved = kv;
  resolved["data"] = data_dir.string();
  resolved["split"] = split_name;
  resolved["index"] = std::to_string(index);
  resolved["block"] = std::to_string(block);
  resolved["layer"] = std::to_string(layer);
  manifest.set_config(resolved, inv.config_path);

  const Tensor x = sample_tensor(set, index);
  model.set_training(false);
  const Tensor attn = model.dump_attention(x, block - 1, layer - 1);
  const auto w = attn.data();
  const std::size_t positions = w.size();
  const double samples_per_position = static_cast<double>(set.length) / static_cast<double>(positions);

  std::ostringstream csv;
  csv << "position,weight,input_sample\n";
  for (std::size_t p = 0; p < positions; ++p) {
    csv << p << ',' << format_double(w[p]) << ','
        << format_double((static_cast<double>(p) + 0.5) * samples_per_position) << '\n';
  }
  Json j;
  j["block"] = block;
  j["layer"] = layer;
  j["split"] = split_name;
  j["index"] = index;
  j["class"] = set.class_names[set.labels[index]];
  j["positions"] = positions;
  j["input_length"] = set.length;
  j["samples_per_position"] = samples_per_position;
  j["weights"] = std::vector<double>(w.begin(), w.end());
  j["impulse_times_s"] = index < set.impulse_times_s.size() ? set.impulse_times_s[index] : std::vector<double>{};
  j["sample_rate_hz"] = set.sample_rate_hz;

  fs::create_directories(inv.out_dir);
  save_artifact(manifest, inv.out_dir / "attention.csv", csv.str());
  save_artifact(manifest, inv.out_dir / "attention.json", j.dump(2) + "\n");

  std::vector<std::size_t> order(positions);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  out << "block " << block << ", MSCAL layer " << layer << ": " << positions << " positions, weights sum to "
      << format_double(std::accumulate(w.begin(), w.end(), 0.0)) << "\n";
  out << "top positions:";
  for (std::size_t i = 0; i < std::min<std::size_t>(5, positions); ++i) {
    out << ' ' << order[i] << " (" << fmt(w[order[i]], 4) << ")";
  }
  out << "\nwrote " << inv.out_dir.string() << "\n";
}

void cmd_gradcheck(const Invocation& inv, RunManifest& manifest, std::ostream& out) {
  const auto& kv = inv.kv;
  GradcheckOptions opt;
  opt.step = kv_double(kv, "step", opt.step);
  opt.tolerance = kv_double(kv, "tolerance", opt.tolerance);
  opt.abs_floor = kv_double(kv, "abs_floor", opt.abs_floor);
  opt.magnitude_floor = kv_double(kv, "magnitude_floor", opt.magnitude_floor);
  opt.max_probes = kv_size(kv, "max_probes", opt.max_probes);
  opt.seed = kv_u64(kv, "seed", opt.seed);
  if (!(opt.step > 0.0)) throw ConfigError("step must be positive");
  std::vector<std::string> components;
  {
    std::istringstream list(kv_string(kv, "components", ""));
    std::string name;
    while (std::getline(list, name, ',')) {
      if (!name.empty()) components.push_back(name);
    }
  }
  const std::string fault = kv_string(kv, "inject_fault", "");

  KeyValues resolved{{"step", format_double(opt.step)},
                     {"tolerance", format_double(opt.tolerance)},
                     {"abs_floor", format_double(opt.abs_floor)},
                     {"magnitude_floor", format_double(opt.magnitude_floor)},
                     {"max_probes", std::to_string(opt.max_probes)},
                     {"seed", std::to_string(opt.seed)},
                     {"components", join(components, ",")},
                     {"inject_fault", fault}};
  manifest.set_config(resolved, inv.config_path);
  manifest.set_seed(opt.seed);

  std::optional<ScopedBackwardFault> injected;
  if (!fault.empty()) {
    injected.emplace(fault);
    out << "injecting a sign flip into the backward rule of '" << fault << "'\n";
  }
  const auto start = std::chrono::steady_clock::now();
  const auto results = run_gradcheck_suite(opt, components);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  injected.reset();

  std::ostringstream csv;
  csv << "component,max_rel_error,max_abs_error,probes,seconds,passed\n";
  out << std::left << std::setw(20) << "component" << std::right << std::setw(15) << "max rel error" << std::setw(15)
      << "max abs error" << std::setw(8) << "probes" << "  status\n";
  std::vector<std::string> failed;
  for (const auto& r : results) {
    std::ostringstream rel, abs;
    rel << std::scientific << std::setprecision(3) << r.report.max_rel_error;
    abs << std::scientific << std::setprecision(3) << r.report.max_abs_error;
    out << std::left << std::setw(20) << r.component << std::right << std::setw(15) << rel.str() << std::setw(15)
        << abs.str() << std::setw(8) << r.report.entries.size() << "  " << (r.report.passed ? "ok" : "FAIL") << "\n";
    csv << r.component << ',' << format_double(r.report.max_rel_error) << ',' << format_double(r.report.max_abs_error)
        << ',' << r.report.entries.size() << ',' << format_double(r.seconds) << ','
        << (r.report.passed ? "true" : "false") << '\n';
    if (!r.report.passed) failed.push_back(r.component);
  }
  out << results.size() << " components, tolerance " << format_double(opt.tolerance) << ", " << fmt(seconds, 2)
      << " s\n";

  fs::create_directories(inv.out_dir);
  save_artifact(manifest, inv.out_dir / "gradcheck.csv", csv.str());
  manifest.set_field("suite_seconds", seconds);
  manifest.set_field("failed_components", failed);
  if (!failed.empty()) throw VerificationFailure("gradient check failed for: " + join(failed, ", "));
}

}  // namespace faultformer::cli
