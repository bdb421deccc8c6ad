#pragma once

#include <cstdint>
#include <vector>

#include "gdro/theory.hpp"

namespace gdro {

// Randomized verification suites for the analytical results. Shared between
// the `theory-check` CLI command and the acceptance harness so both run the
// same checks at the same tolerances.

struct LseSuiteResult {
  long vectors = 0;
  long sandwich_violations = 0;
  double max_variational_residual = 0.0;
  long gradient_instances = 0;
  double max_gradient_rel_error = 0.0;
  bool passed = false;
};
// Sandwich max L <= R_eta <= max L + log B / eta over random vectors
// (B in {2..32}, eta in {0.1, 1, 10}), variational residual < 1e-10,
// entropic gradient vs central finite differences < 1e-6 relative.
LseSuiteResult run_lse_suite(long vectors, long gradient_instances,
                             std::uint64_t seed);

struct SqrtSuiteResult {
  long instances = 0;
  double max_allocation_error = 0.0;  // closed form vs numerical minimizer
  double max_budget_residual = 0.0;
  long optimal_above_uniform = 0;
  double max_equal_case_gap = 0.0;  // |optimal - uniform| on equal variances
  bool passed = false;
};
SqrtSuiteResult run_sqrt_suite(long instances, std::uint64_t seed);

struct ConvexGameSuiteResult {
  long specs = 0;
  long seeds_per_spec = 0;
  long bound_violations = 0;
  double max_gap_to_bound_ratio = 0.0;
  bool inner_solves_valid = true;
  double mean_gap_small_horizon = 0.0;  // T = 2500
  double mean_gap_large_horizon = 0.0;  // T = 40000
  bool trend_ok = false;
  bool passed = false;
};
ConvexGameSuiteResult run_convex_game_suite(long specs, long seeds_per_spec,
                                            long horizon, std::uint64_t seed);

struct RolloutGameSuiteResult {
  long specs = 0;
  long gap_bound_violations = 0;
  long objective_gap_violations = 0;
  long budget_bound_violations = 0;
  double max_gap_to_bound_ratio = 0.0;
  bool passed = false;
};
RolloutGameSuiteResult run_rollout_game_suite(long specs, long horizon,
                                              std::uint64_t seed);

struct SoftminSuiteResult {
  long vectors = 0;
  long sandwich_violations = 0;
  bool passed = false;
};
SoftminSuiteResult run_softmin_suite(long vectors, std::uint64_t seed);

struct DpSuiteResult {
  long instances = 0;
  long objective_mismatches = 0;
  long total_mismatches = 0;
  long feasibility_mismatches = 0;
  long budget_equality_errors = 0;
  bool passed = false;
};
// Exhaustive-enumeration equivalence on random instances with B <= 4 active
// bins, K <= 5 arms, M <= 12 prompts; feasible targets must be met with
// exact integer equality.
DpSuiteResult run_dp_suite(long instances, std::uint64_t seed);

struct EfronSteinSuiteResult {
  std::vector<BoundedDiffReport> reports;  // one per (epsilon, prompt, n)
  long total_trials = 0;
  long violations = 0;
  bool variance_bounds_ok = true;
  bool variance_trend_ok = true;  // mc var at n=8 <= mc var at n=2 + 3 sigma
  bool passed = false;
};
EfronSteinSuiteResult run_efron_stein_suite(long trials_per_case,
                                            long variance_groups,
                                            std::uint64_t seed);

}  // namespace gdro
