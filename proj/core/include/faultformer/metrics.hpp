#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace faultformer {

/// 100 * correct / total.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

/// Rows are true classes, columns predicted classes.
std::vector<std::vector<std::size_t>> confusion_matrix(std::span<const std::size_t> predictions,
                                                       std::span<const std::size_t> labels,
                                                       std::size_t num_classes);

/// Between/within-class scatter criteria, scalarized by trace:
///   J1 = tr(Sb) / tr(Sw),  J2 = tr(Sw + Sb) / tr(Sw)
/// tr(Sw) is floored at `kWithinFloor`; `capped` reports when the floor was hit.
/// `j2_alt` = tr(Sw + Sb) / tr(Sb) is kept alongside for comparison with
/// published tables that appear to use it.
struct ScatterMetrics {
  static constexpr double kWithinFloor = 1e-12;

  double j1 = 0.0;
  double j2 = 1.0;
  double j2_alt = 0.0;
  double trace_between = 0.0;
  double trace_within = 0.0;
  bool capped = false;
};

/// `features` is row-major N x dim.
ScatterMetrics scatter_metrics(std::span<const double> features, std::size_t dim,
                               std::span<const std::size_t> labels);

}  // namespace faultformer
