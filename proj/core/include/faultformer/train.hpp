#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "faultformer/config.hpp"
#include "faultformer/data.hpp"
#include "faultformer/gradcheck.hpp"
#include "faultformer/metrics.hpp"
#include "faultformer/model.hpp"
#include "faultformer/tensor.hpp"

namespace faultformer {

/// Mean over the batch of -log softmax(logits)[label], computed with
/// max-subtraction. logits: [B x C].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of every tensor in `params` from its
/// accumulated gradient. Parameters without a gradient buffer count as zero
/// gradient. A non-finite gradient aborts before anything is modified.
void adam_step(const std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Every N epochs on_checkpoint is invoked; 0 disables.
  std::size_t checkpoint_every = 0;

  void validate() const;
  KeyValues to_key_values() const;
  static TrainConfig from_key_values(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_key_values(const KeyValues& kv);
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct TrainHooks {
  std::function<void(const EpochStats&)> on_epoch;
  std::function<void(std::size_t epoch)> on_checkpoint;
};

struct EvalResult {
  double accuracy = 0.0;
  ScatterMetrics scatter;
  std::vector<std::vector<std::size_t>> confusion;
  std::vector<std::size_t> predictions;
};

struct TrainReport {
  std::vector<double> loss;
  std::vector<double> train_accuracy;
  std::vector<double> test_accuracy;
  double initial_loss = 0.0;  // first mini-batch loss before any update
  EvalResult final_eval;
  double wall_clock_s = 0.0;
  std::uint64_t seed = 0;
  KeyValues config;

  /// JSON document; timing fields are omitted when include_timing is false so
  /// seed-identical runs compare byte-for-byte.
  std::string to_json(bool include_timing = true) const;
  /// epoch,loss,train_acc,test_acc
  std::string curves_csv() const;
};

/// Eval-mode inference over a dataset (training flag restored afterwards).
EvalResult evaluate(Classifier& model, const SignalDataset& data, std::size_t batch_size = 64);

/// Penultimate features of every sample, row-major N x hidden.
std::vector<double> extract_features(Classifier& model, const SignalDataset& data, std::size_t batch_size = 64);

/// Mini-batch Adam on cross-entropy with a seeded shuffle per epoch. Throws
/// NumericError when the loss turns non-finite.
TrainReport train(Classifier& model, const SignalDataset& train_set, const SignalDataset& test_set,
                  const TrainConfig& config, const TrainHooks& hooks = {});

std::string eval_to_json(const EvalResult& result, const std::vector<std::string>& class_names);
std::string confusion_csv(const EvalResult& result);

}  // namespace faultformer
