#include "faultformer/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "faultformer/autograd.hpp"
#include "faultformer/errors.hpp"

namespace faultformer {

using detail::input_grad;
using detail::make_result;
using detail::NodeList;

namespace {

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  auto v = logits.data();
  std::vector<std::size_t> out(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto row = v.subspan(b * classes, classes);
    out[b] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void check_dataset(const Classifier& model, const SignalDataset& data, const char* which) {
  data.validate();
  if (data.length != model.input_length()) {
    throw DimensionError(std::string(which) + " samples have length " + std::to_string(data.length) +
                         ", model expects " + std::to_string(model.input_length()));
  }
  for (auto l : data.labels) {
    if (l >= model.num_classes()) {
      throw DimensionError(std::string(which) + " label " + std::to_string(l) + " exceeds model class count " +
                           std::to_string(model.num_classes()));
    }
  }
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json eval_json(const EvalResult& r) {
  return {
      {"accuracy", r.accuracy},
      {"j1", finite_or_null(r.scatter.j1)},
      {"j2", finite_or_null(r.scatter.j2)},
      {"j2_alt", finite_or_null(r.scatter.j2_alt)},
      {"trace_between", r.scatter.trace_between},
      {"trace_within", r.scatter.trace_within},
      {"scatter_capped", r.scatter.capped},
      {"confusion", r.confusion},
  };
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B x C], got " + to_string(logits.shape()));
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) throw ContractError("cross_entropy: label count does not match batch");
  for (auto l : labels) {
    if (l >= classes) throw ContractError("cross_entropy: label " + std::to_string(l) + " out of range");
  }
  auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = &z[b * classes];
    const double peak = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - peak);
    const double lse = peak + std::log(s);
    total += lse - row[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) (*probs)[b * classes + c] = std::exp(row[c] - lse);
  }
  std::vector<std::size_t> targets(labels.begin(), labels.end());
  return make_result("cross_entropy", {1}, {total / static_cast<double>(batch)}, {logits},
                     [probs, targets, batch, classes](std::span<const double> g, const NodeList& in) {
                       auto gz = input_grad(in[0]);
                       if (gz.empty()) return;
                       const double w = g[0] / static_cast<double>(batch);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           const double onehot = c == targets[b] ? 1.0 : 0.0;
                           gz[b * classes + c] += w * ((*probs)[b * classes + c] - onehot);
                         }
                       }
                     });
}

void adam_step(const std::vector<NamedTensor>& params, AdamState& state, const AdamConfig& config) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.tensor.numel(), 0.0);
      state.second_moment.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adam_step: state does not match parameters");
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + p.name + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor tensor = params[i].tensor;
    auto grad = tensor.grad();
    if (grad.empty()) continue;
    auto values = tensor.mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

KeyValues TrainConfig::to_key_values() const {
  return {{"learning_rate", format_double(learning_rate)}, {"batch_size", std::to_string(batch_size)},
          {"epochs", std::to_string(epochs)},             {"seed", std::to_string(seed)},
          {"beta1", format_double(beta1)},                {"beta2", format_double(beta2)},
          {"epsilon", format_double(epsilon)},            {"checkpoint_every", std::to_string(checkpoint_every)}};
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv, TrainConfig c) {
  c.learning_rate = kv_double(kv, "learning_rate", c.learning_rate);
  c.batch_size = kv_size(kv, "batch_size", c.batch_size);
  c.epochs = kv_size(kv, "epochs", c.epochs);
  c.seed = kv_u64(kv, "seed", c.seed);
  c.beta1 = kv_double(kv, "beta1", c.beta1);
  c.beta2 = kv_double(kv, "beta2", c.beta2);
  c.epsilon = kv_double(kv, "epsilon", c.epsilon);
  c.checkpoint_every = kv_size(kv, "checkpoint_every", c.checkpoint_every);
  return c;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) { return from_key_values(kv, TrainConfig{}); }

std::vector<double> extract_features(Classifier& model, const SignalDataset& data, std::size_t batch_size) {
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;
  std::vector<double> features;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    rows.resize(std::min(batch_size, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    auto out = model.forward(data.batch(rows));
    features.insert(features.end(), out.features.data().begin(), out.features.data().end());
  }
  model.set_training(was_training);
  return features;
}

EvalResult evaluate(Classifier& model, const SignalDataset& data, std::size_t batch_size) {
  check_dataset(model, data, "evaluation");
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard guard;
  EvalResult result;
  std::vector<double> features;
  std::size_t hidden = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    rows.resize(std::min(batch_size, data.size() - start));
    std::iota(rows.begin(), rows.end(), start);
    auto out = model.forward(data.batch(rows));
    auto pred = argmax_rows(out.logits);
    result.predictions.insert(result.predictions.end(), pred.begin(), pred.end());
    hidden = out.features.dim(1);
    features.insert(features.end(), out.features.data().begin(), out.features.data().end());
  }
  model.set_training(was_training);
  result.accuracy = accuracy(result.predictions, data.labels);
  result.confusion = confusion_matrix(result.predictions, data.labels, model.num_classes());
  if (std::set<std::size_t>(data.labels.begin(), data.labels.end()).size() >= 2) {
    result.scatter = scatter_metrics(features, hidden, data.labels);
  }
  return result;
}

TrainReport train(Classifier& model, const SignalDataset& train_set, const SignalDataset& test_set,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  check_dataset(model, train_set, "training");
  check_dataset(model, test_set, "test");
  if (train_set.size() == 0) throw ContractError("train: empty training set");

  const auto start_time = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = config.seed;
  report.config = config.to_key_values();

  const auto params = model.parameters();
  AdamState adam;
  const AdamConfig adam_config{config.learning_rate, config.beta1, config.beta2, config.epsilon};
  std::vector<std::size_t> order(train_set.size());
  bool first_batch = true;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);

    model.set_training(true);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(config.batch_size, order.size() - start));
      const auto labels = train_set.batch_labels(rows);
      auto out = model.forward(train_set.batch(rows));
      Tensor loss = cross_entropy(out.logits, labels);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                           std::to_string(start) + " (loss = " + std::to_string(value) + ")");
      }
      if (first_batch) {
        report.initial_loss = value;
        first_batch = false;
      }
      for (const auto& p : params) Tensor(p.tensor).zero_grad();
      backward(loss);
      adam_step(params, adam, adam_config);

      loss_sum += value * static_cast<double>(rows.size());
      const auto pred = argmax_rows(out.logits);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.loss = loss_sum / static_cast<double>(order.size());
    stats.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(order.size());
    stats.test_accuracy = evaluate(model, test_set).accuracy;
    report.loss.push_back(stats.loss);
    report.train_accuracy.push_back(stats.train_accuracy);
    report.test_accuracy.push_back(stats.test_accuracy);
    if (hooks.on_epoch) hooks.on_epoch(stats);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      hooks.on_checkpoint(epoch);
    }
  }

  model.set_training(false);
  report.final_eval = evaluate(model, test_set);
  report.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_time).count();
  return report;
}

std::string TrainReport::to_json(bool include_timing) const {
  nlohmann::json doc;
  doc["seed"] = seed;
  doc["config"] = config;
  doc["epochs"] = loss.size();
  doc["initial_loss"] = initial_loss;
  doc["loss"] = loss;
  doc["train_accuracy"] = train_accuracy;
  doc["test_accuracy"] = test_accuracy;
  doc["final"] = eval_json(final_eval);
  if (include_timing) doc["wall_clock_s"] = wall_clock_s;
  return doc.dump(2) + "\n";
}

std::string TrainReport::curves_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,train_acc,test_acc\n";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    out << i + 1 << ',' << loss[i] << ',' << train_accuracy[i] << ',' << test_accuracy[i] << '\n';
  }
  return out.str();
}

std::string eval_to_json(const EvalResult& result, const std::vector<std::string>& class_names) {
  nlohmann::json doc = eval_json(result);
  doc["class_names"] = class_names;
  doc["samples"] = result.predictions.size();
  return doc.dump(2) + "\n";
}

std::string confusion_csv(const EvalResult& result) {
  std::ostringstream out;
  out << "true_class";
  for (std::size_t c = 0; c < result.confusion.size(); ++c) out << ",pred_" << c;
  out << ",total\n";
  for (std::size_t r = 0; r < result.confusion.size(); ++r) {
    out << r;
    std::size_t total = 0;
    for (auto v : result.confusion[r]) {
      out << ',' << v;
      total += v;
    }
    out << ',' << total << '\n';
  }
  return out.str();
}

}  // namespace faultformer
