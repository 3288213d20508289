#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace faultformer::cli {

enum ExitCode : int {
  kSuccess = 0,
  kVerificationFailure = 1,
  kConfigError = 2,
  kNumericFailure = 3,
};

/// Runs one command line (program name excluded) and returns the exit code.
/// All console output goes to `out` / `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace faultformer::cli
