#include "faultformer/metrics.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "faultformer/errors.hpp"

namespace faultformer {

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.empty()) throw ContractError("accuracy: empty input");
  if (predictions.size() != labels.size()) throw ContractError("accuracy: predictions and labels differ in length");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predictions[i] == labels[i];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predictions,
                                                       std::span<const std::size_t> labels,
                                                       std::size_t num_classes) {
  if (predictions.size() != labels.size()) throw ContractError("confusion_matrix: length mismatch");
  std::vector<std::vector<std::size_t>> m(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw ContractError("confusion_matrix: class index out of range");
    }
    ++m[labels[i]][predictions[i]];
  }
  return m;
}

ScatterMetrics scatter_metrics(std::span<const double> features, std::size_t dim,
                               std::span<const std::size_t> labels) {
  const std::size_t n = labels.size();
  if (dim < 1) throw ContractError("scatter_metrics: feature dimension must be >= 1");
  if (n < 2) throw ContractError("scatter_metrics: need at least 2 samples");
  if (features.size() != n * dim) throw DimensionError("scatter_metrics: features are not N x dim");
  const std::size_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2) {
    throw ContractError("scatter_metrics: need at least 2 distinct classes");
  }

  std::vector<double> class_mean(classes * dim, 0.0);
  std::vector<std::size_t> class_count(classes, 0);
  std::vector<double> global_mean(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    ++class_count[labels[i]];
    for (std::size_t d = 0; d < dim; ++d) {
      class_mean[labels[i] * dim + d] += features[i * dim + d];
      global_mean[d] += features[i * dim + d];
    }
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (class_count[k] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) class_mean[k * dim + d] /= static_cast<double>(class_count[k]);
  }
  for (auto& v : global_mean) v /= static_cast<double>(n);

  ScatterMetrics m;
  for (std::size_t k = 0; k < classes; ++k) {
    if (class_count[k] == 0) continue;
    double sq = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = class_mean[k * dim + d] - global_mean[d];
      sq += diff * diff;
    }
    m.trace_between += static_cast<double>(class_count[k]) * sq;
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = features[i * dim + d] - class_mean[labels[i] * dim + d];
      m.trace_within += diff * diff;
    }
  }

  double within = m.trace_within;
  if (within < ScatterMetrics::kWithinFloor) {
    within = ScatterMetrics::kWithinFloor;
    m.capped = true;
  }
  m.j1 = m.trace_between / within;
  m.j2 = 1.0 + m.j1;  // tr(Sw + Sb) / tr(Sw)
  m.j2_alt = m.trace_between > 0.0 ? (m.trace_within + m.trace_between) / m.trace_between
                                   : std::numeric_limits<double>::infinity();
  return m;
}

}  // namespace faultformer
