#pragma once

#include <string>
#include <vector>

#include "faultformer/gradcheck.hpp"
#include "faultformer/model.hpp"

namespace faultformer {

struct SuiteResult {
  std::string component;
  GradcheckReport report;
  double seconds = 0.0;
};

/// Component names in the order the suite runs them.
std::vector<std::string> gradcheck_components();

/// Finite-difference checks of every primitive, layer, block and a small
/// full model, all at shapes no larger than 2 x 8 x 32. `only` restricts the
/// run to the named components (empty runs everything).
std::vector<SuiteResult> run_gradcheck_suite(const GradcheckOptions& options = {},
                                             const std::vector<std::string>& only = {});

/// Names of every op with a backward rule, as accepted by fault injection.
std::vector<std::string> differentiable_ops();

/// Sign-flips the incoming gradient of one op's backward rule while alive.
/// Throws ConfigError for an unknown op name.
class ScopedBackwardFault {
 public:
  explicit ScopedBackwardFault(const std::string& op);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

/// The reduced model configuration used by the "model" component.
ModelConfig gradcheck_model_config();

}  // namespace faultformer
