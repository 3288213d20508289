#include "faultformer/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <thread>

#include "faultformer/errors.hpp"

namespace faultformer {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Independent stream per (seed, stream, index).
std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

bool parse_double(std::string_view text, double& value) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

void write_double(std::ostream& out, double value) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  out.write(buf, ptr - buf);
}

}  // namespace

std::string to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::normal: return "normal";
    case FaultKind::outer_race: return "outer_race";
    case FaultKind::inner_race: return "inner_race";
    case FaultKind::gear_chip: return "gear_chip";
  }
  return "normal";
}

FaultKind parse_fault_kind(const std::string& text) {
  if (text == "normal") return FaultKind::normal;
  if (text == "outer_race") return FaultKind::outer_race;
  if (text == "inner_race") return FaultKind::inner_race;
  if (text == "gear_chip") return FaultKind::gear_chip;
  throw ConfigError("unknown fault kind '" + text + "'");
}

void FaultSpec::validate(double sample_rate_hz) const {
  const double nyquist = sample_rate_hz / 2.0;
  if (!(sample_rate_hz > 0.0)) throw ConfigError("sample rate must be positive");
  if (!(shaft_hz > 0.0) || 3.0 * shaft_hz >= nyquist) {
    throw ConfigError(name + ": shaft harmonics must lie below Nyquist (" + std::to_string(nyquist) + " Hz)");
  }
  if (kind == FaultKind::normal) return;
  if (!(characteristic_hz > 0.0) || characteristic_hz >= nyquist) {
    throw ConfigError(name + ": characteristic frequency must lie in (0, " + std::to_string(nyquist) + ") Hz");
  }
  if (!(resonance_hz > 0.0) || resonance_hz >= nyquist) {
    throw ConfigError(name + ": resonance frequency must lie in (0, " + std::to_string(nyquist) + ") Hz");
  }
  if (!(decay_s > 0.0)) throw ConfigError(name + ": ring-down time constant must be positive");
  if (modulation_depth < 0.0 || modulation_depth > 1.0) throw ConfigError(name + ": modulation depth outside [0,1]");
}

std::size_t FaultSpec::ringdown_samples(double sample_rate_hz) const {
  return static_cast<std::size_t>(std::ceil(3.0 * decay_s * sample_rate_hz));
}

std::vector<FaultSpec> four_class_preset() {
  return {
      {"normal", FaultKind::normal, 0.0, 0.0, 1e-3, 0.0, 30.0, 0.0, 0.5},
      {"outer_race", FaultKind::outer_race, 107.0, 3000.0, 1.0e-3, 3.0, 30.0, 0.0, 0.5},
      {"inner_race", FaultKind::inner_race, 162.0, 4200.0, 0.8e-3, 3.0, 30.0, 0.5, 0.5},
      {"gear_chip", FaultKind::gear_chip, 30.0, 1500.0, 2.0e-3, 4.0, 30.0, 0.0, 0.5},
  };
}

GeneratedSignal gen_fault_signal(const FaultSpec& spec, std::size_t length, double sample_rate_hz,
                                 std::uint64_t seed) {
  spec.validate(sample_rate_hz);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter_phase(-0.1, 0.1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  GeneratedSignal out;
  out.samples.assign(length, 0.0);
  const double dt = 1.0 / sample_rate_hz;
  constexpr double harmonic_gain[3] = {1.0, 0.5, 0.25};
  for (int h = 0; h < 3; ++h) {
    const double phase = jitter_phase(rng);
    const double f = (h + 1) * spec.shaft_hz;
    const double a = spec.shaft_amplitude * harmonic_gain[h];
    for (std::size_t n = 0; n < length; ++n) out.samples[n] += a * std::sin(kTwoPi * f * n * dt + phase);
  }
  if (spec.kind == FaultKind::normal) return out;

  const double period = 1.0 / spec.characteristic_hz;
  const double duration = static_cast<double>(length) * dt;
  const double tail = 8.0 * spec.decay_s;
  double t = unit(rng) * period;
  while (t < duration) {
    out.impulse_times_s.push_back(t);
    t += period * (1.0 + 0.02 * (unit(rng) - 0.5));
  }
  const double shaft_phase = unit(rng) * kTwoPi;
  for (double ti : out.impulse_times_s) {
    double amp = spec.amplitude;
    if (spec.kind == FaultKind::inner_race) {
      amp *= 1.0 - spec.modulation_depth * 0.5 * (1.0 - std::cos(kTwoPi * spec.shaft_hz * ti + shaft_phase));
    }
    const auto first = static_cast<std::size_t>(std::ceil(ti / dt));
    for (std::size_t n = first; n < length; ++n) {
      const double tau = n * dt - ti;
      if (tau > tail) break;
      out.samples[n] += amp * std::exp(-tau / spec.decay_s) * std::sin(kTwoPi * spec.resonance_hz * tau);
    }
  }
  return out;
}

double signal_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double total = 0.0;
  for (double v : x) total += v * v;
  return total / static_cast<double>(x.size());
}

std::vector<double> add_noise_snr(std::span<const double> x, double snr_db, std::uint64_t seed) {
  const double ps = signal_power(x);
  if (ps == 0.0) throw ContractError("add_noise_snr: SNR is undefined for an all-zero signal");
  const double pn = ps / std::pow(10.0, snr_db / 10.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(pn));
  std::vector<double> out(x.begin(), x.end());
  for (auto& v : out) v += noise(rng);
  return out;
}

double measured_snr_db(std::span<const double> clean, std::span<const double> noisy) {
  if (clean.size() != noisy.size()) throw DimensionError("measured_snr_db: length mismatch");
  double pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) pn += (noisy[i] - clean[i]) * (noisy[i] - clean[i]);
  pn /= static_cast<double>(clean.size());
  return 10.0 * std::log10(signal_power(clean) / pn);
}

std::vector<double> minmax_normalize(std::span<const double> x) {
  std::vector<double> out(x.size(), 0.0);
  if (x.empty()) return out;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double range = *hi - *lo;
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - *lo) / range;
  return out;
}

std::vector<std::size_t> SignalDataset::class_counts() const {
  std::vector<std::size_t> counts(num_classes(), 0);
  for (auto l : labels) ++counts[l];
  return counts;
}

void SignalDataset::validate() const {
  if (length == 0) throw DimensionError("dataset length must be positive");
  if (samples.size() != labels.size() * length) {
    throw DimensionError("dataset holds " + std::to_string(samples.size()) + " values for " +
                         std::to_string(labels.size()) + " samples of length " + std::to_string(length));
  }
  for (auto l : labels) {
    if (l >= num_classes()) throw ContractError("label " + std::to_string(l) + " outside class range");
  }
}

Tensor SignalDataset::batch(std::span<const std::size_t> rows) const {
  std::vector<double> values(rows.size() * length);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw ContractError("batch row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(samples.begin() + rows[i] * length, length, values.begin() + i * length);
  }
  return Tensor({rows.size(), 1, length}, std::move(values));
}

std::vector<std::size_t> SignalDataset::batch_labels(std::span<const std::size_t> rows) const {
  std::vector<std::size_t> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = labels[rows[i]];
  return out;
}

DatasetSplit make_dataset(const std::vector<FaultSpec>& specs, const DatasetOptions& options) {
  if (specs.empty()) throw ConfigError("make_dataset: no classes given");
  if (options.per_class < 2) throw ContractError("make_dataset: per_class must be >= 2");
  if (!(options.split_ratio > 0.0 && options.split_ratio < 1.0)) {
    throw ContractError("make_dataset: split_ratio must lie in (0, 1)");
  }
  for (const auto& s : specs) s.validate(options.sample_rate_hz);

  const std::size_t classes = specs.size();
  const std::size_t total = classes * options.per_class;
  const std::size_t length = options.length;
  std::vector<double> values(total * length);
  std::vector<std::vector<double>> impulses(total);
  std::vector<double> snr(total, 0.0);

  // Each sample owns its random streams, so workers can split the range freely.
  auto generate = [&](std::size_t begin, std::size_t end) {
    for (std::size_t idx = begin; idx < end; ++idx) {
      const auto& spec = specs[idx / options.per_class];
      auto seed_rng = stream_rng(options.seed, 1, idx);
      auto signal = gen_fault_signal(spec, length, options.sample_rate_hz, seed_rng());
      std::vector<double> noisy = signal.samples;
      if (options.snr_db) {
        noisy = add_noise_snr(signal.samples, *options.snr_db, seed_rng());
        snr[idx] = measured_snr_db(signal.samples, noisy);
      }
      auto normalized = minmax_normalize(noisy);
      std::copy(normalized.begin(), normalized.end(), values.begin() + idx * length);
      impulses[idx] = std::move(signal.impulse_times_s);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, 8);
  if (workers == 1 || total < 64) {
    generate(0, total);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (total + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t begin = w * chunk;
      const std::size_t end = std::min(total, begin + chunk);
      if (begin < end) pool.emplace_back(generate, begin, end);
    }
  }

  DatasetSplit split;
  for (SignalDataset* d : {&split.train, &split.test}) {
    d->length = length;
    d->sample_rate_hz = options.sample_rate_hz;
    d->snr_db = options.snr_db;
    d->provenance = Provenance::synthetic;
    for (const auto& s : specs) d->class_names.push_back(s.name);
  }
  const auto train_per_class =
      static_cast<std::size_t>(std::llround(static_cast<double>(options.per_class) * options.split_ratio));
  if (train_per_class == 0 || train_per_class >= options.per_class) {
    throw ContractError("make_dataset: split leaves an empty train or test partition");
  }
  auto split_rng = stream_rng(options.seed, 2, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<std::size_t> order(options.per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = c * options.per_class + i;
    std::shuffle(order.begin(), order.end(), split_rng);
    for (std::size_t i = 0; i < order.size(); ++i) {
      SignalDataset& d = i < train_per_class ? split.train : split.test;
      const std::size_t idx = order[i];
      d.samples.insert(d.samples.end(), values.begin() + idx * length, values.begin() + (idx + 1) * length);
      d.labels.push_back(c);
      d.source_index.push_back(idx);
      d.impulse_times_s.push_back(impulses[idx]);
    }
  }
  if (options.snr_db) {
    double mean = 0.0;
    for (double s : snr) mean += s;
    mean /= static_cast<double>(total);
    split.train.measured_snr_db = mean;
    split.test.measured_snr_db = mean;
  }
  return split;
}

SignalDataset load_csv(std::istream& in, std::size_t length, bool has_labels, std::optional<std::size_t> num_classes) {
  if (length == 0) throw ConfigError("load_csv: signal length must be positive");
  SignalDataset d;
  d.length = length;
  d.provenance = Provenance::csv;
  std::string line;
  std::size_t row = 0;
  std::size_t max_label = 0;
  const std::size_t expected = length + (has_labels ? 1 : 0);
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto fields = split_fields(line);
    double first = 0.0;
    if (row == 1 && !parse_double(fields.front(), first)) continue;  // header
    if (fields.size() != expected) {
      throw ParseError("row " + std::to_string(row) + ": expected " + std::to_string(expected) + " fields, found " +
                       std::to_string(fields.size()));
    }
    for (std::size_t i = 0; i < length; ++i) {
      double v = 0.0;
      if (!parse_double(fields[i], v)) {
        throw ParseError("row " + std::to_string(row) + ", column " + std::to_string(i + 1) + ": '" +
                         std::string(fields[i]) + "' is not numeric");
      }
      d.samples.push_back(v);
    }
    std::size_t label = 0;
    if (has_labels) {
      double raw = 0.0;
      if (!parse_double(fields.back(), raw) || raw < 0.0 || raw != std::floor(raw)) {
        throw ParseError("row " + std::to_string(row) + ": label '" + std::string(fields.back()) +
                         "' is not a non-negative integer");
      }
      label = static_cast<std::size_t>(raw);
      if (num_classes && label >= *num_classes) {
        throw ParseError("row " + std::to_string(row) + ": label " + std::to_string(label) + " outside [0, " +
                         std::to_string(*num_classes) + ")");
      }
    }
    max_label = std::max(max_label, label);
    d.labels.push_back(label);
  }
  const std::size_t classes = num_classes.value_or(d.labels.empty() ? 1 : max_label + 1);
  for (std::size_t c = 0; c < classes; ++c) d.class_names.push_back("class" + std::to_string(c));
  return d;
}

SignalDataset load_csv(const std::string& path, std::size_t length, bool has_labels,
                       std::optional<std::size_t> num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return load_csv(in, length, has_labels, num_classes);
}

void save_csv(std::ostream& out, const SignalDataset& dataset, bool with_labels) {
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    auto s = dataset.sample(r);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out << ',';
      write_double(out, s[i]);
    }
    if (with_labels) out << ',' << dataset.labels[r];
    out << '\n';
  }
}

void save_csv(const std::string& path, const SignalDataset& dataset, bool with_labels) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write dataset '" + path + "'");
  save_csv(out, dataset, with_labels);
}

}  // namespace faultformer
