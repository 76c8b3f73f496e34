#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

// Built-in oracle and property checks, shared by the `selftest` subcommand
// and the acceptance runner. A failed property is reported, not thrown;
// unexpected exceptions are caught and reported as failures too.

namespace dualmamba {

inline constexpr double kScanOracleTolerance = 1e-5;
inline constexpr double kGradientTolerance = 1e-4;

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

// "PASS name: detail (1.23 s)"
std::string format_check(const CheckResult& result);

// Random time-invariant S6 instances (L <= 64, N <= 16, D_inner <= 8): the
// fused scan against the convolutional form, norm-wise relative error.
CheckResult check_scan_oracle(std::size_t instances = 20, std::uint64_t seed = 1);

// Finite differences in f64 for every differentiable op, each composite
// module and a small full model.
CheckResult check_gradients();

// Depthwise branch never mixes channels, band branch never mixes pixels,
// spatial scan never lets a token see later pixels. Exact comparisons.
CheckResult check_structural_isolation(std::size_t trials = 100, std::uint64_t seed = 2);

// OA, AA and kappa of [[45,5],[15,35]].
CheckResult check_metrics_oracle();

// Indian Pines profile against the published parameter and FLOP budgets.
CheckResult check_complexity_budget();

// Every check above, in that order.
std::vector<CheckResult> run_selftest();

}  // namespace dualmamba
