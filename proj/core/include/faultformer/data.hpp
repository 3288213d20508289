#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "faultformer/tensor.hpp"

namespace faultformer {

enum class FaultKind { normal, outer_race, inner_race, gear_chip };

std::string to_string(FaultKind kind);
FaultKind parse_fault_kind(const std::string& text);

/// Parameters of one synthetic machine-condition class.
///
/// Every class shares a shaft signature (1x, 2x, 3x shaft harmonics). Fault
/// classes add a train of exponentially decaying resonance bursts repeating
/// at `characteristic_hz`; inner-race bursts are amplitude-modulated by the
/// shaft rotation.
struct FaultSpec {
  std::string name;
  FaultKind kind = FaultKind::normal;
  double characteristic_hz = 0.0;
  double resonance_hz = 0.0;
  double decay_s = 1e-3;
  double amplitude = 1.0;
  double shaft_hz = 30.0;
  double modulation_depth = 0.0;
  double shaft_amplitude = 1.0;

  void validate(double sample_rate_hz) const;
  /// Samples until a burst decays to ~5% (three time constants).
  std::size_t ringdown_samples(double sample_rate_hz) const;
};

/// normal / outer_race / inner_race / gear_chip at a 30 Hz shaft speed,
/// meant for 12 kHz sampling.
std::vector<FaultSpec> four_class_preset();

struct GeneratedSignal {
  std::vector<double> samples;
  std::vector<double> impulse_times_s;
};

GeneratedSignal gen_fault_signal(const FaultSpec& spec, std::size_t length, double sample_rate_hz,
                                 std::uint64_t seed);

/// Mean of v(n)^2.
double signal_power(std::span<const double> x);

/// Adds white Gaussian noise with variance P_s / 10^(snr_db/10).
std::vector<double> add_noise_snr(std::span<const double> x, double snr_db, std::uint64_t seed);

/// 10 log10(P_clean / P_(noisy - clean)).
double measured_snr_db(std::span<const double> clean, std::span<const double> noisy);

/// (x - min) / (max - min); constant input maps to zeros.
std::vector<double> minmax_normalize(std::span<const double> x);

enum class Provenance { synthetic, csv };

struct SignalDataset {
  std::size_t length = 0;
  std::vector<double> samples;  // row-major N x length
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  double sample_rate_hz = 12000.0;
  std::optional<double> snr_db;
  std::optional<double> measured_snr_db;  // mean over generated samples
  Provenance provenance = Provenance::synthetic;
  // Index of each sample in the generation order (synthetic data only).
  std::vector<std::size_t> source_index;
  // Ground-truth burst times per sample (synthetic data only).
  std::vector<std::vector<double>> impulse_times_s;

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::span<const double> sample(std::size_t i) const { return {samples.data() + i * length, length}; }
  std::vector<std::size_t> class_counts() const;
  void validate() const;

  /// Stacks the selected rows into a [B x 1 x length] tensor.
  Tensor batch(std::span<const std::size_t> rows) const;
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> rows) const;
};

struct DatasetOptions {
  std::size_t per_class = 100;
  std::size_t length = 2048;
  double sample_rate_hz = 12000.0;
  std::optional<double> snr_db;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
};

struct DatasetSplit {
  SignalDataset train;
  SignalDataset test;
};

/// Generates, noises (optionally), normalizes each sample, and splits each
/// class with a seeded shuffle.
DatasetSplit make_dataset(const std::vector<FaultSpec>& specs, const DatasetOptions& options);

/// One sample per row, optional trailing integer label, optional header row
/// (detected by a non-numeric first token). Values are kept as parsed.
SignalDataset load_csv(std::istream& in, std::size_t length, bool has_labels,
                       std::optional<std::size_t> num_classes = std::nullopt);
SignalDataset load_csv(const std::string& path, std::size_t length, bool has_labels,
                       std::optional<std::size_t> num_classes = std::nullopt);

/// Shortest round-trip decimal formatting, so load_csv(save_csv(d)) is exact.
void save_csv(std::ostream& out, const SignalDataset& dataset, bool with_labels = true);
void save_csv(const std::string& path, const SignalDataset& dataset, bool with_labels = true);

}  // namespace faultformer
