// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: faultformer_acceptance [criterion ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "faultformer/checkpoint.hpp"
#include "faultformer/data.hpp"
#include "faultformer/gradcheck_suite.hpp"
#include "faultformer/metrics.hpp"
#include "faultformer/model.hpp"
#include "faultformer/ops.hpp"
#include "faultformer/spectral.hpp"
#include "faultformer/train.hpp"
#include "oracles.hpp"

using namespace faultformer;

namespace {

struct Outcome {
  bool passed = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, pattern, a, b, c);
  return buf;
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  auto results = run_gradcheck_suite();
  const double elapsed = seconds_since(start);
  Outcome o;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& r : results) {
    if (!r.report.passed || !(r.report.max_rel_error < 1e-4)) {
      o.passed = false;
      o.detail += r.component + " failed; ";
    }
    if (r.report.max_rel_error >= worst) {
      worst = r.report.max_rel_error;
      worst_name = r.component;
    }
  }
  if (!(elapsed < 60.0)) o.passed = false;
  o.detail += std::to_string(results.size()) + " components, max rel error " + fmt("%.2e", worst) + " (" +
              worst_name + "), " + fmt("%.2f s", elapsed);
  return o;
}

Outcome spectral_identities() {
  Outcome o;
  double worst_roundtrip = 0.0, worst_parseval = 0.0, worst_naive = 0.0;
  for (std::size_t n : {4u, 61u, 123u, 247u, 496u, 2048u}) {
    Tensor x = oracle::random_tensor({3, n}, n);
    auto s = rdft(x);
    worst_roundtrip = std::max(worst_roundtrip, oracle::max_abs_diff(irdft(s).data(), x.data()));
    for (std::size_t row = 0; row < 3; ++row) {
      double time_energy = 0.0;
      for (std::size_t t = 0; t < n; ++t) time_energy += x[row * n + t] * x[row * n + t];
      double freq_energy = 0.0;
      for (std::size_t k = 0; k < s.bins(); ++k) {
        const bool mirrored = k != 0 && !(n % 2 == 0 && k == n / 2);
        const double m = s.magnitude(row, k);
        freq_energy += (mirrored ? 2.0 : 1.0) * m * m;
      }
      freq_energy /= static_cast<double>(n);
      worst_parseval = std::max(worst_parseval, std::abs(freq_energy - time_energy) / time_energy);
    }
  }
  for (std::size_t n = 2; n <= 64; ++n) {
    Tensor x = oracle::random_tensor({1, n}, 1000 + n);
    auto s = rdft(x);
    auto ref = oracle::naive_dft(x.data());
    for (std::size_t k = 0; k < s.bins(); ++k) {
      worst_naive = std::max(worst_naive, std::abs(std::complex<double>(s.re(0, k), s.im(0, k)) - ref[k]));
    }
  }
  o.passed = worst_roundtrip < 1e-9 && worst_parseval < 1e-9 && worst_naive < 1e-10;
  o.detail = fmt("round-trip %.2e, Parseval %.2e, naive DFT (L<=64) %.2e", worst_roundtrip, worst_parseval,
                 worst_naive);
  return o;
}

Outcome shape_conformance() {
  const std::vector<Shape> expected{{32, 2048}, {32, 496}, {32, 496}, {64, 247}, {64, 247}, {128, 123},
                                    {128, 123}, {256, 61},  {256, 61}, {15616},   {256},     {4}};
  Model model(ModelConfig{}, 1);
  model.set_training(false);
  NoGradGuard guard;
  ForwardTrace trace;
  model.forward(oracle::random_tensor({1, 1, 2048}, 2), &trace);
  Outcome o;
  o.passed = trace.stages.size() == expected.size();
  std::string chain;
  for (std::size_t i = 0; i < trace.stages.size(); ++i) {
    if (i >= expected.size() || trace.stages[i].shape != expected[i]) o.passed = false;
    chain += (chain.empty() ? "" : " -> ") + to_string(trace.stages[i].shape);
  }
  o.detail = chain;
  return o;
}

Outcome initialization_identity() {
  Model model(ModelConfig{}, 3);
  Tensor x = oracle::random_tensor({2, 1, 2048}, 4);
  NoGradGuard guard;
  Tensor conv_out;
  Tensor embed = model.embedding().forward(x, &conv_out);
  const double farel = oracle::max_abs_diff(embed.data(), scale(conv_out, 1.1).data());

  double tffn = 0.0;
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    const auto& layer = model.blocks()[b].tffn[0];
    const ModelConfig& c = model.config();
    Tensor h = oracle::random_tensor({2, c.block_channels(b), c.block_length(b)}, 10 + b);
    Tensor local = gelu(depthwise_conv1d(conv1d(h, layer.expand), layer.depthwise));
    Tensor expected = add(h, conv1d(scale(local, 0.1), layer.squeeze));
    tffn = std::max(tffn, oracle::max_abs_diff(layer.forward(h).data(), expected.data()));
  }
  Outcome o;
  o.passed = farel < 1e-9 && tffn < 1e-9;
  o.detail = fmt("FAREL vs 1.1*conv %.2e, TFFN vs x + squeeze(0.1*X) %.2e (all four blocks)", farel, tffn);
  return o;
}

Outcome metric_oracles() {
  Outcome o;
  double worst = 0.0;
  bool exact = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 30, dim = 8, classes = 3;
    auto flat = oracle::random_vector(n * dim, seed, -3.0, 3.0);
    std::vector<std::vector<double>> rows;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < n; ++i) {
      rows.emplace_back(flat.begin() + i * dim, flat.begin() + (i + 1) * dim);
      labels.push_back((i * 7 + seed) % classes);
    }
    auto ref = oracle::brute_force_scatter(rows, labels, classes);
    auto m = scatter_metrics(flat, dim, labels);
    const double j1 = ref.trace_sb / ref.trace_sw;
    const double j2 = (ref.trace_sw + ref.trace_sb) / ref.trace_sw;
    worst = std::max({worst, std::abs(m.trace_between - ref.trace_sb) / ref.trace_sb,
                      std::abs(m.trace_within - ref.trace_sw) / ref.trace_sw, std::abs(m.j1 - j1) / j1,
                      std::abs(m.j2 - j2) / j2});
    exact = exact && m.j2 == 1.0 + m.j1;
  }
  using V = std::vector<std::size_t>;
  const bool hand = accuracy(V{0, 1, 2, 3}, V{0, 1, 2, 3}) == 100.0 && accuracy(V{1, 0}, V{0, 1}) == 0.0 &&
                    accuracy(V{0, 1, 1, 3}, V{0, 1, 2, 3}) == 75.0 &&
                    accuracy(V{2, 2, 2, 0, 1, 2, 0, 0}, V{2, 2, 1, 0, 1, 0, 0, 1}) == 62.5;
  o.passed = worst < 1e-12 && exact && hand;
  o.detail = fmt("max relative deviation from brute-force scatter %.2e over 10 instances", worst) +
             ", J2 == 1 + J1: " + (exact ? "yes" : "no") + ", hand counts: " + (hand ? "ok" : "wrong");
  return o;
}

Outcome snr_calibration() {
  const auto specs = four_class_preset();
  double worst_short = 0.0;
  for (double target : {-10.0, -8.0, -6.0, -4.0, -2.0}) {
    double mean = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      auto clean = gen_fault_signal(specs[seed % specs.size()], 2048, 12000.0, seed).samples;
      mean += measured_snr_db(clean, add_noise_snr(clean, target, 500 + seed)) / 20.0;
    }
    worst_short = std::max(worst_short, std::abs(mean - target));
  }
  double worst_long = 0.0;
  for (double target : {-10.0, -6.0, -2.0}) {
    auto clean = gen_fault_signal(specs[1], 1 << 16, 12000.0, 77).samples;
    worst_long = std::max(worst_long, std::abs(measured_snr_db(clean, add_noise_snr(clean, target, 78)) - target));
  }
  Outcome o;
  o.passed = worst_short <= 0.5 && worst_long <= 0.1;
  o.detail = fmt("worst |mean error| at L=2048 over 20 seeds %.4f dB, at L=65536 %.4f dB", worst_short, worst_long);
  return o;
}

ModelConfig desk_model(std::size_t classes) {
  ModelConfig c;
  c.num_blocks = 2;
  c.embed_channels = 8;
  c.num_classes = classes;
  return c;
}

DatasetSplit desk_data(double snr_db, std::uint64_t seed) {
  DatasetOptions opt;
  opt.per_class = 100;
  opt.snr_db = snr_db;
  opt.seed = seed;
  return make_dataset(four_class_preset(), opt);
}

TrainConfig desk_train(std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = 32;
  t.seed = seed;
  return t;
}

Outcome desk_run() {
  const auto start = Clock::now();
  auto data = desk_data(-4.0, 2024);
  Model model(desk_model(4), 2024);
  auto report = train(model, data.train, data.test, desk_train(50, 2024));
  const double elapsed = seconds_since(start);
  Outcome o;
  o.passed = report.final_eval.accuracy >= 90.0 && elapsed < 600.0;
  o.detail = fmt("test accuracy %.2f%% after 50 epochs (best epoch %.2f%%), %.0f s", report.final_eval.accuracy,
                 *std::max_element(report.test_accuracy.begin(), report.test_accuracy.end()), elapsed);
  return o;
}

Outcome ablation_trend() {
  constexpr std::size_t kEpochs = 20;
  double full = 0.0, plain = 0.0;
  std::string per_seed;
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    auto data = desk_data(-6.0, seed);
    ModelConfig c = desk_model(4);
    Model a = build_variant(c, seed);
    const double acc_full = train(a, data.train, data.test, desk_train(kEpochs, seed)).final_eval.accuracy;
    c.ablation = Ablation::non_farel;
    Model b = build_variant(c, seed);
    const double acc_plain = train(b, data.train, data.test, desk_train(kEpochs, seed)).final_eval.accuracy;
    full += acc_full / 3.0;
    plain += acc_plain / 3.0;
    per_seed += fmt(" %.1f/%.1f", acc_full, acc_plain);
  }
  Outcome o;
  o.passed = full >= plain - 1.0;
  o.detail = fmt("mean accuracy full %.2f%% vs non-farel %.2f%% at -6 dB, %.0f epochs; per seed full/non-farel:",
                 full, plain, kEpochs) +
             per_seed;
  return o;
}

Outcome determinism() {
  auto data = desk_data(-4.0, 7);
  std::string reports[2], checkpoints[2];
  for (int run = 0; run < 2; ++run) {
    Model model(desk_model(4), 7);
    reports[run] = train(model, data.train, data.test, desk_train(2, 7)).to_json(false);
    std::ostringstream ckpt;
    save_checkpoint(ckpt, model, {{"epoch", "2"}});
    checkpoints[run] = ckpt.str();
  }
  Outcome o;
  o.passed = reports[0] == reports[1] && checkpoints[0] == checkpoints[1];
  o.detail = std::string("report ") + (reports[0] == reports[1] ? "identical" : "differs") + ", checkpoint (" +
             std::to_string(checkpoints[0].size()) + " bytes) " +
             (checkpoints[0] == checkpoints[1] ? "identical" : "differs");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"spectral-identities", spectral_identities},
      {"shape-conformance", shape_conformance},
      {"initialization-identity", initialization_identity},
      {"metric-oracles", metric_oracles},
      {"snr-calibration", snr_calibration},
      {"desk-run", desk_run},
      {"ablation-trend", ablation_trend},
      {"determinism", determinism},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.passed;
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
