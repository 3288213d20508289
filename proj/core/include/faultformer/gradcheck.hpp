#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "faultformer/tensor.hpp"

namespace faultformer {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements whose absolute error is below this pass regardless of the
  // relative error (gradients near zero).
  double abs_floor = 1e-8;
  // Gradients at least this large always count toward the relative error.
  double magnitude_floor = 1e-6;
  // 0 checks every element; otherwise this many elements drawn at random
  // across all checked tensors.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  // Largest relative error among elements that are not rescued by the
  // absolute floor or that exceed the magnitude floor.
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(x+h) - f(x-h)) / 2h, perturbing `x` in place.
GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                          const GradcheckOptions& options = {});

/// Same, for a closure over several leaf tensors (parameters or inputs).
GradcheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<NamedTensor>& leaves,
                          const GradcheckOptions& options = {});

}  // namespace faultformer
