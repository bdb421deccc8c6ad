#include "gdro/verification.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gdro/rollout_budgeter.hpp"

namespace gdro {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<double> random_simplex(Rng& rng, std::size_t n, double floor) {
  std::vector<double> p(n);
  double z = 0.0;
  for (double& v : p) {
    v = floor - std::log(std::max(rng.next_double(), 1e-12));
    z += v;
  }
  for (double& v : p) v /= z;
  return p;
}

}  // namespace

LseSuiteResult run_lse_suite(long vectors, long gradient_instances,
                             std::uint64_t seed) {
  LseSuiteResult result;
  result.vectors = vectors;
  result.gradient_instances = gradient_instances;
  Rng rng = Rng::stream(seed, 0x6c7365ULL);
  const double etas[] = {0.1, 1.0, 10.0};

  for (long i = 0; i < vectors; ++i) {
    const std::size_t b = 2 + rng.next_index(31);  // B in {2..32}
    const double eta = etas[rng.next_index(3)];
    const double scale = std::pow(10.0, -1.0 + 2.0 * rng.next_double());
    std::vector<double> losses(b);
    for (double& l : losses) l = scale * (2.0 * rng.next_double() - 1.0) * 5.0;

    const LseResult lse = lse_value_and_best_response(losses, eta);
    const double max_l = *std::max_element(losses.begin(), losses.end());
    const double gap = std::log(static_cast<double>(b)) / eta;
    const double tol = 1e-12 * (1.0 + std::abs(max_l) + gap);
    if (!(max_l <= lse.value + tol && lse.value <= max_l + gap + tol))
      ++result.sandwich_violations;
    result.max_variational_residual =
        std::max(result.max_variational_residual, lse.variational_residual);
  }

  // Gradient identity against central finite differences through quadratic
  // test losses.
  for (long i = 0; i < gradient_instances; ++i) {
    const std::size_t b = 2 + rng.next_index(7);
    const std::size_t d = 2 + rng.next_index(4);
    const double eta = etas[rng.next_index(3)];
    std::vector<QuadraticGroupLoss> groups(b);
    for (auto& g : groups) {
      g.curvature = 0.2 + rng.next_double();
      g.center.resize(d);
      for (double& c : g.center) c = 2.0 * rng.next_double() - 1.0;
      g.offset = rng.next_double();
    }
    std::vector<double> theta(d);
    for (double& t : theta) t = 2.0 * rng.next_double() - 1.0;

    std::vector<double> losses(b);
    std::vector<std::vector<double>> grads(b);
    for (std::size_t g = 0; g < b; ++g) {
      losses[g] = groups[g].value(theta);
      grads[g] = groups[g].gradient(theta);
    }
    const std::vector<double> analytic = entropic_gradient(losses, grads, eta);

    const double h = 1e-5;
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      std::vector<double> lo_l(b), hi_l(b);
      theta[c] += h;
      for (std::size_t g = 0; g < b; ++g) hi_l[g] = groups[g].value(theta);
      theta[c] -= 2.0 * h;
      for (std::size_t g = 0; g < b; ++g) lo_l[g] = groups[g].value(theta);
      theta[c] += h;
      const double fd = (lse_value_and_best_response(hi_l, eta).value -
                         lse_value_and_best_response(lo_l, eta).value) /
                        (2.0 * h);
      err2 += (analytic[c] - fd) * (analytic[c] - fd);
      ref2 += fd * fd;
    }
    const double rel = std::sqrt(err2) / std::max(std::sqrt(ref2), 1e-8);
    result.max_gradient_rel_error =
        std::max(result.max_gradient_rel_error, rel);
  }

  result.passed = result.sandwich_violations == 0 &&
                  result.max_variational_residual < 1e-10 &&
                  result.max_gradient_rel_error < 1e-6;
  return result;
}

SqrtSuiteResult run_sqrt_suite(long instances, std::uint64_t seed) {
  SqrtSuiteResult result;
  result.instances = instances;
  Rng rng = Rng::stream(seed, 0x73717274ULL);

  for (long i = 0; i < instances; ++i) {
    const std::size_t b = 2 + rng.next_index(11);
    VarianceAllocQuery query;
    query.shares = random_simplex(rng, b, 0.15);
    query.budget = 1.0 + 9.0 * rng.next_double();
    query.variances.resize(b);
    const bool equal_case = i % 5 == 4;
    const double common = 0.1 + 3.9 * rng.next_double();
    for (double& v : query.variances)
      v = equal_case ? common : 0.1 + 3.9 * rng.next_double();

    const SqrtAllocationResult closed = sqrt_allocation(query);
    const std::vector<double> numeric =
        minimize_variance_allocation(query, 1e-13);
    for (std::size_t j = 0; j < b; ++j)
      result.max_allocation_error =
          std::max(result.max_allocation_error,
                   std::abs(closed.allocation[j] - numeric[j]));

    double budget_used = 0.0;
    for (std::size_t j = 0; j < b; ++j)
      budget_used += query.shares[j] * closed.allocation[j];
    result.max_budget_residual = std::max(
        result.max_budget_residual, std::abs(budget_used - query.budget));

    if (closed.optimal_value >
        closed.uniform_value * (1.0 + 1e-12) + 1e-15)
      ++result.optimal_above_uniform;
    if (equal_case)
      result.max_equal_case_gap =
          std::max(result.max_equal_case_gap,
                   std::abs(closed.optimal_value - closed.uniform_value));
  }

  result.passed = result.max_allocation_error <= 1e-9 &&
                  result.max_budget_residual <= 1e-12 * 16.0 &&
                  result.optimal_above_uniform == 0 &&
                  result.max_equal_case_gap <= 1e-12;
  return result;
}

ConvexGameSuiteResult run_convex_game_suite(long specs, long seeds_per_spec,
                                            long horizon, std::uint64_t seed) {
  ConvexGameSuiteResult result;
  result.specs = specs;
  result.seeds_per_spec = seeds_per_spec;
  Rng rng = Rng::stream(seed, 0x67616d65ULL);

  for (long s = 0; s < specs; ++s) {
    const int d = 2 + static_cast<int>(rng.next_index(9));   // <= 10
    const int b = 2 + static_cast<int>(rng.next_index(7));   // <= 8
    ConvexGameSpec spec = ConvexGameSpec::random(d, b, horizon, rng);

    double mean_gap = 0.0;
    double bound = 0.0;
    for (long k = 0; k < seeds_per_spec; ++k) {
      const ConvexGameReport report =
          run_convex_game(spec, seed * 0x9e37ULL + s * 1000 + k);
      mean_gap += report.measured_gap;
      bound = report.bound;
      if (!report.valid) result.inner_solves_valid = false;
    }
    mean_gap /= static_cast<double>(seeds_per_spec);
    result.max_gap_to_bound_ratio =
        std::max(result.max_gap_to_bound_ratio, mean_gap / bound);
    if (mean_gap > bound) ++result.bound_violations;
  }

  // Two-point horizon trend on a fixed spec, seed-averaged.
  ConvexGameSpec trend_spec = ConvexGameSpec::random(6, 5, 2500, rng);
  const long trend_seeds = 12;
  for (long k = 0; k < trend_seeds; ++k) {
    trend_spec.horizon = 2500;
    result.mean_gap_small_horizon +=
        run_convex_game(trend_spec, seed + 77 + k).measured_gap;
    trend_spec.horizon = 40000;
    result.mean_gap_large_horizon +=
        run_convex_game(trend_spec, seed + 77 + k).measured_gap;
  }
  result.mean_gap_small_horizon /= trend_seeds;
  result.mean_gap_large_horizon /= trend_seeds;
  result.trend_ok =
      result.mean_gap_large_horizon < result.mean_gap_small_horizon;

  result.passed = result.bound_violations == 0 && result.trend_ok &&
                  result.inner_solves_valid;
  return result;
}

RolloutGameSuiteResult run_rollout_game_suite(long specs, long horizon,
                                              std::uint64_t seed) {
  RolloutGameSuiteResult result;
  result.specs = specs;
  Rng rng = Rng::stream(seed, 0x726f6c6cULL);

  for (long s = 0; s < specs; ++s) {
    const int b = 1 + static_cast<int>(rng.next_index(4));  // <= 4
    const int k = 1 + static_cast<int>(rng.next_index(5));  // <= 5
    const RolloutGameSpec spec = RolloutGameSpec::random(b, k, horizon, rng);
    const RolloutGameReport report = run_rollout_game(spec);

    const double tol = 1e-9 * (1.0 + report.explicit_bound);
    if (report.measured_gap > report.explicit_bound + tol)
      ++result.gap_bound_violations;
    if (report.objective_gap > report.explicit_bound + tol)
      ++result.objective_gap_violations;
    if (report.budget_violation > report.budget_violation_bound + tol)
      ++result.budget_bound_violations;
    result.max_gap_to_bound_ratio =
        std::max(result.max_gap_to_bound_ratio,
                 report.measured_gap / report.explicit_bound);
  }
  result.passed = result.gap_bound_violations == 0 &&
                  result.objective_gap_violations == 0 &&
                  result.budget_bound_violations == 0;
  return result;
}

SoftminSuiteResult run_softmin_suite(long vectors, std::uint64_t seed) {
  SoftminSuiteResult result;
  result.vectors = vectors;
  Rng rng = Rng::stream(seed, 0x736d696eULL);
  const double etas[] = {0.1, 1.0, 10.0, 1e6};

  for (long i = 0; i < vectors; ++i) {
    const std::size_t k = 1 + rng.next_index(12);
    const int n_min = 1 + static_cast<int>(rng.next_index(3));
    std::vector<int> arms(k);
    for (std::size_t j = 0; j < k; ++j) arms[j] = n_min + static_cast<int>(j);
    std::vector<double> costs(k);
    for (double& c : costs) c = 3.0 * rng.next_double();
    const double mu = 2.0 * rng.next_double();
    const double eta = etas[rng.next_index(4)];
    const SoftminResult sm = softmin_arm_distribution(costs, arms, mu, eta);
    if (!sm.sandwich_ok) ++result.sandwich_violations;
  }
  result.passed = result.sandwich_violations == 0;
  return result;
}

DpSuiteResult run_dp_suite(long instances, std::uint64_t seed) {
  DpSuiteResult result;
  result.instances = instances;
  Rng rng = Rng::stream(seed, 0x6470ULL);

  for (long inst = 0; inst < instances; ++inst) {
    const int bins = 1 + static_cast<int>(rng.next_index(4));   // B <= 4
    const int k = 1 + static_cast<int>(rng.next_index(5));      // K <= 5
    const int n_min = 1 + static_cast<int>(rng.next_index(3));
    const int m = bins + static_cast<int>(rng.next_index(
                             static_cast<std::size_t>(13 - bins)));  // <= 12

    // Random counts summing to m with every bin active.
    std::vector<int> counts(static_cast<std::size_t>(bins), 1);
    for (int extra = 0; extra < m - bins; ++extra)
      ++counts[rng.next_index(static_cast<std::size_t>(bins))];

    // Target anywhere around the achievable range, including infeasible.
    const long lo = static_cast<long>(m) * n_min;
    const long hi = static_cast<long>(m) * (n_min + k - 1);
    const long target =
        std::max(lo - 2 + static_cast<long>(rng.next_index(
                              static_cast<std::size_t>(hi - lo + 5))),
                 1L);

    BudgeterOptions options;
    options.arm_min = n_min;
    options.arm_max = n_min + k - 1;
    options.count_weighted_objective = true;
    options.mean_budget = static_cast<double>(target) / m;
    RolloutBudgeter configured(bins, options);

    // Randomized arm scores drive non-trivial distributions.
    std::vector<double> scores(static_cast<std::size_t>(k));
    for (int b = 0; b < bins; ++b) {
      for (double& s : scores) s = 4.0 * rng.next_double() - 2.0;
      configured.set_arm_scores(b, scores);
    }

    const AllocationResult dp = configured.select_allocation(counts, m);

    // Exhaustive enumeration with the same nearest-total fallback.
    std::vector<std::vector<double>> logp(static_cast<std::size_t>(bins));
    for (int b = 0; b < bins; ++b) {
      const std::vector<double> p = configured.arm_distribution(b);
      logp[static_cast<std::size_t>(b)].resize(static_cast<std::size_t>(k));
      for (int a = 0; a < k; ++a)
        logp[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] =
            static_cast<double>(counts[static_cast<std::size_t>(b)]) *
            std::log(p[static_cast<std::size_t>(a)]);
    }
    long best_total = -1;
    long best_dist = std::numeric_limits<long>::max();
    std::vector<int> assign(static_cast<std::size_t>(bins), 0);
    // Pass 1: nearest achievable total.
    const long combos = static_cast<long>(std::pow(k, bins));
    for (long code = 0; code < combos; ++code) {
      long c = code;
      long total = 0;
      for (int b = 0; b < bins; ++b) {
        assign[static_cast<std::size_t>(b)] = static_cast<int>(c % k);
        c /= k;
        total += static_cast<long>(counts[static_cast<std::size_t>(b)]) *
                 (n_min + assign[static_cast<std::size_t>(b)]);
      }
      const long dist = std::labs(total - target);
      if (dist < best_dist || (dist == best_dist && total < best_total)) {
        best_dist = dist;
        best_total = total;
      }
    }
    // Pass 2: best objective at the chosen total.
    double best_obj = -kInf;
    for (long code = 0; code < combos; ++code) {
      long c = code;
      long total = 0;
      double obj = 0.0;
      for (int b = 0; b < bins; ++b) {
        const int a = static_cast<int>(c % k);
        c /= k;
        total += static_cast<long>(counts[static_cast<std::size_t>(b)]) *
                 (n_min + a);
        obj += logp[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)];
      }
      if (total == best_total) best_obj = std::max(best_obj, obj);
    }

    long dp_total = 0;
    for (int b = 0; b < bins; ++b)
      dp_total += static_cast<long>(counts[static_cast<std::size_t>(b)]) *
                  dp.arms[static_cast<std::size_t>(b)];
    if (dp_total != best_total) ++result.total_mismatches;
    if (std::abs(dp.objective - best_obj) > 1e-9 * (1.0 + std::abs(best_obj)))
      ++result.objective_mismatches;
    if (dp.feasible != (best_total == target)) ++result.feasibility_mismatches;
    if (dp.feasible && dp_total != target) ++result.budget_equality_errors;
  }

  result.passed = result.objective_mismatches == 0 &&
                  result.total_mismatches == 0 &&
                  result.feasibility_mismatches == 0 &&
                  result.budget_equality_errors == 0;
  return result;
}

EfronSteinSuiteResult run_efron_stein_suite(long trials_per_case,
                                            long variance_groups,
                                            std::uint64_t seed) {
  EfronSteinSuiteResult result;
  const double epsilons[] = {0.25, 1.0};
  const double difficulties[] = {2.5, 0.0, -1.5};  // hard / medium / easy
  const int group_sizes[] = {2, 4, 8};

  for (double eps : epsilons) {
    GrpoOptions options;
    options.answer_count = 6;
    options.advantage_epsilon = eps;
    std::vector<SyntheticPrompt> prompts;
    for (std::size_t i = 0; i < 3; ++i)
      prompts.push_back({static_cast<PromptUid>(i), static_cast<int>(i) % 6,
                         difficulties[i]});
    TabularGrpoWorld world(std::move(prompts), options);

    for (std::size_t p = 0; p < 3; ++p) {
      std::vector<double> variance_by_n;
      std::vector<double> stderr_by_n;
      for (int n : group_sizes) {
        const BoundedDiffReport report = bounded_differences_check(
            world, static_cast<PromptUid>(p), n, trials_per_case,
            variance_groups, seed + static_cast<std::uint64_t>(n));
        result.total_trials += report.trials;
        result.violations += report.violations;
        if (!report.variance_ok) result.variance_bounds_ok = false;
        variance_by_n.push_back(report.mc_variance);
        stderr_by_n.push_back(report.variance_stderr);
        result.reports.push_back(report);
      }
      // Empirical 1/n contraction trend with 3-sigma slack.
      const double slack = 3.0 * std::sqrt(stderr_by_n.front() *
                                               stderr_by_n.front() +
                                           stderr_by_n.back() *
                                               stderr_by_n.back());
      if (variance_by_n.back() > variance_by_n.front() + slack)
        result.variance_trend_ok = false;
    }
  }

  result.passed = result.violations == 0 && result.variance_bounds_ok &&
                  result.variance_trend_ok;
  return result;
}

}  // namespace gdro
