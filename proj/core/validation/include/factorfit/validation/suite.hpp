#pragma once

#include <cstdint>
#include <string>
#include <vector>

/// Desk-scale oracle checks run by `factorfit validate` and the tests.
namespace factorfit::validation {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  int instances = 0;
  bool passed = false;
};

struct SuiteOptions {
  /// Check names to run; empty runs all.
  std::vector<std::string> only;
  /// Multiplies every tolerance. A check passes when max_error < tolerance,
  /// so 0 forces failures.
  double tolerance_scale = 1.0;
  std::uint64_t seed = 0;
};

/// "woodbury", "lemma", "loglik", "jacobian".
std::vector<std::string> check_names();

/// Throws ConfigError for an unknown name in `only`.
std::vector<CheckResult> run_suite(const SuiteOptions& options);

}  // namespace factorfit::validation
