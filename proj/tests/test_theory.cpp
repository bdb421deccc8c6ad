#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "gdro/theory.hpp"
#include "gdro/verification.hpp"

using namespace gdro;

TEST_CASE("log-sum-exp value and softmax on the two-zero vector") {
  const LseResult r = lse_value_and_best_response(std::vector<double>{0, 0},
                                                  2.0);
  CHECK(r.value == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-12));
  CHECK(r.distribution[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.distribution[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.variational_residual < 1e-10);
}

TEST_CASE("equal losses saturate the upper sandwich bound") {
  const double c = -1.7;
  const double eta = 0.5;
  const LseResult r =
      lse_value_and_best_response(std::vector<double>{c, c, c, c}, eta);
  CHECK(r.value == doctest::Approx(c + std::log(4.0) / eta).epsilon(1e-12));
  for (double q : r.distribution)
    CHECK(q == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sandwich and variational identity hold on random vectors") {
  const LseSuiteResult r = run_lse_suite(300, 30, 99);
  CHECK(r.sandwich_violations == 0);
  CHECK(r.max_variational_residual < 1e-10);
  CHECK(r.max_gradient_rel_error < 1e-6);
}

TEST_CASE("lse is translation equivariant, softmax translation invariant") {
  const std::vector<double> losses{0.4, -1.2, 2.7, 0.0};
  const double eta = 1.3;
  const double shift = 5.5;
  std::vector<double> shifted = losses;
  for (double& l : shifted) l += shift;
  const LseResult a = lse_value_and_best_response(losses, eta);
  const LseResult b = lse_value_and_best_response(shifted, eta);
  CHECK(b.value - a.value == doctest::Approx(shift).epsilon(1e-12));
  for (std::size_t i = 0; i < losses.size(); ++i)
    CHECK(a.distribution[i] ==
          doctest::Approx(b.distribution[i]).epsilon(1e-12));
}

TEST_CASE("entropic gradient reduces to the lone gradient for B = 1") {
  const std::vector<std::vector<double>> grads{{1.0, -2.0, 0.5}};
  const std::vector<double> g =
      entropic_gradient(std::vector<double>{3.0}, grads, 2.0);
  CHECK(g == grads[0]);
}

TEST_CASE("large eta concentrates the entropic gradient on the worst group") {
  const std::vector<double> losses{0.2, 1.0, 0.7};
  const std::vector<std::vector<double>> grads{{1, 0}, {0, 1}, {1, 1}};
  const std::vector<double> g = entropic_gradient(losses, grads, 1e4);
  CHECK(std::abs(g[0] - 0.0) < 1e-3);
  CHECK(std::abs(g[1] - 1.0) < 1e-3);
}

TEST_CASE("entropic gradient validates dimensions") {
  CHECK_THROWS_AS(entropic_gradient(std::vector<double>{1.0, 2.0},
                                    {{1.0}, {1.0, 2.0}}, 1.0),
                  std::invalid_argument);
}

TEST_CASE("random game specs keep losses in [0, M] and gradients under G") {
  Rng rng(127);
  for (int i = 0; i < 10; ++i) {
    const ConvexGameSpec spec = ConvexGameSpec::random(5, 6, 100, rng);
    const double m = spec.loss_bound();
    const double g = spec.lipschitz_bound();
    for (int s = 0; s < 500; ++s) {
      // Uniform sample from the ball.
      std::vector<double> theta(5);
      double n2 = 0.0;
      for (double& t : theta) {
        t = rng.next_gaussian();
        n2 += t * t;
      }
      const double target =
          spec.radius * std::pow(rng.next_double(), 1.0 / 5.0);
      for (double& t : theta) t *= target / std::sqrt(n2);
      for (const auto& group : spec.groups) {
        const double value = group.value(theta);
        CHECK(value >= -1e-12);
        CHECK(value <= m + 1e-12);
        double g2 = 0.0;
        for (double v : group.gradient(theta)) g2 += v * v;
        CHECK(std::sqrt(g2) <= g + 1e-12);
      }
    }
  }
}

TEST_CASE("degenerate one-round game anchors the measured gap") {
  Rng rng(5);
  ConvexGameSpec spec = ConvexGameSpec::random(3, 4, 1, rng);
  spec.gradient_noise = 0.0;
  spec.loss_noise_frac = 0.0;
  spec.learner_step = 1e-12;
  spec.adversary_step = 1e-12;
  const ConvexGameReport report = run_convex_game(spec, 0);

  // theta-bar is the origin and q-bar is uniform.
  double max_loss = 0.0;
  std::vector<double> origin(3, 0.0);
  for (const auto& g : spec.groups)
    max_loss = std::max(max_loss, g.value(origin));
  const std::vector<double> uniform(4, 0.25);
  const InnerSolveResult inner = minimize_mixture_on_ball(spec, uniform);
  REQUIRE(inner.converged);
  CHECK(report.measured_gap ==
        doctest::Approx(max_loss - inner.value).epsilon(1e-9));
}

TEST_CASE("inner ball solver matches the closed-form mixture minimum") {
  Rng rng(17);
  for (int i = 0; i < 20; ++i) {
    const ConvexGameSpec spec = ConvexGameSpec::random(4, 5, 10, rng);
    std::vector<double> q(5);
    double z = 0.0;
    for (double& v : q) {
      v = rng.next_double() + 0.01;
      z += v;
    }
    for (double& v : q) v /= z;

    // The q-mixture of sphere quadratics is one sphere quadratic.
    double total = 0.0;
    std::vector<double> center(4, 0.0);
    double constant = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
      const auto& g = spec.groups[b];
      total += q[b] * g.curvature;
      for (std::size_t c = 0; c < 4; ++c)
        center[c] += q[b] * g.curvature * g.center[c];
      double cn2 = 0.0;
      for (double v : g.center) cn2 += v * v;
      constant += q[b] * (g.curvature * cn2 + g.offset);
    }
    for (double& c : center) c /= total;
    double cn = 0.0;
    for (double v : center) cn += v * v;
    constant -= total * cn;
    cn = std::sqrt(cn);
    const double closed =
        cn <= spec.radius
            ? constant
            : total * (cn - spec.radius) * (cn - spec.radius) + constant;

    const InnerSolveResult inner = minimize_mixture_on_ball(spec, q, 1e-10);
    REQUIRE(inner.converged);
    CHECK(inner.value == doctest::Approx(closed).epsilon(1e-8));
  }
}

TEST_CASE("short convex games respect the regret bound") {
  Rng rng(31);
  for (int i = 0; i < 3; ++i) {
    const ConvexGameSpec spec = ConvexGameSpec::random(4, 4, 2000, rng);
    double mean_gap = 0.0;
    double bound = 0.0;
    for (int s = 0; s < 10; ++s) {
      const ConvexGameReport r = run_convex_game(spec, 100 + s);
      mean_gap += r.measured_gap;
      bound = r.bound;
      CHECK(r.valid);
      CHECK(r.measured_gap >= -1e-9);
    }
    CHECK(mean_gap / 10 <= bound);
  }
}

TEST_CASE("square-root law closed form on the worked example") {
  VarianceAllocQuery query;
  query.variances = {1.0, 4.0};
  query.shares = {0.5, 0.5};
  query.budget = 4.0;
  const SqrtAllocationResult r = sqrt_allocation(query);
  CHECK(r.allocation[0] == doctest::Approx(8.0 / 3).epsilon(1e-12));
  CHECK(r.allocation[1] == doctest::Approx(16.0 / 3).epsilon(1e-12));
  CHECK(r.optimal_value == doctest::Approx(0.5625).epsilon(1e-12));
  CHECK(r.uniform_value == doctest::Approx(0.625).epsilon(1e-12));

  const std::vector<double> numeric = minimize_variance_allocation(query);
  CHECK(std::abs(numeric[0] - r.allocation[0]) < 1e-9);
  CHECK(std::abs(numeric[1] - r.allocation[1]) < 1e-9);
}

TEST_CASE("equal variances give the uniform allocation exactly") {
  VarianceAllocQuery query;
  query.variances = {2.5, 2.5, 2.5};
  query.shares = {0.2, 0.5, 0.3};
  query.budget = 6.0;
  const SqrtAllocationResult r = sqrt_allocation(query);
  for (double n : r.allocation) CHECK(n == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(r.optimal_value == doctest::Approx(r.uniform_value).epsilon(1e-12));
}

TEST_CASE("sqrt allocation rejects degenerate inputs") {
  VarianceAllocQuery query;
  query.variances = {1.0, 0.0};
  query.shares = {0.5, 0.5};
  query.budget = 4.0;
  CHECK_THROWS_AS(sqrt_allocation(query), std::invalid_argument);
  query.variances = {1.0, 1.0};
  query.budget = -1.0;
  CHECK_THROWS_AS(sqrt_allocation(query), std::invalid_argument);
}

TEST_CASE("closed form matches the numerical minimizer on random queries") {
  const SqrtSuiteResult r = run_sqrt_suite(100, 555);
  CHECK(r.max_allocation_error <= 1e-9);
  CHECK(r.max_budget_residual <= 1e-12 * 16.0);
  CHECK(r.optimal_above_uniform == 0);
  CHECK(r.max_equal_case_gap <= 1e-12);
}

TEST_CASE("shadow-price best response is sqrt(v / mu)") {
  CHECK(shadow_price_best_response(1.0, 1.0) == doctest::Approx(1.0));
  CHECK(shadow_price_best_response(4.0, 0.25) == doctest::Approx(4.0));
  CHECK_THROWS_AS(shadow_price_best_response(1.0, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(shadow_price_best_response(0.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("shadow-price best response beats nearby candidates") {
  Rng rng(71);
  for (int i = 0; i < 200; ++i) {
    const double v = 0.1 + 4.0 * rng.next_double();
    const double mu = 0.05 + 2.0 * rng.next_double();
    const double n = shadow_price_best_response(v, mu);
    const auto objective = [&](double x) { return v / x + mu * x; };
    CHECK(objective(n) <= objective(n + 0.01));
    CHECK(objective(n) <= objective(std::max(n - 0.01, 1e-6)));
  }
}

TEST_CASE("soft-min distribution on the worked two-arm example") {
  // V = v / n with v = 1: costs (1, 0.5); mu = 0.3 adds (0.3, 0.6).
  const std::vector<double> costs{1.0, 0.5};
  const std::vector<int> arms{1, 2};
  const SoftminResult r = softmin_arm_distribution(costs, arms, 0.3, 1.0);
  const double expected = std::exp(0.2) / (1.0 + std::exp(0.2));
  CHECK(r.distribution[1] == doctest::Approx(expected).epsilon(1e-10));
  CHECK(r.distribution[1] == doctest::Approx(0.5498).epsilon(1e-3));
  CHECK(r.sandwich_ok);
}

TEST_CASE("huge eta concentrates the soft-min on the argmin arm") {
  const std::vector<double> costs{0.8, 0.3, 0.9};
  const std::vector<int> arms{2, 3, 4};
  const SoftminResult r = softmin_arm_distribution(costs, arms, 0.0, 1e6);
  CHECK(r.distribution[1] > 1.0 - 1e-9);
  CHECK(r.value == doctest::Approx(r.min_cost).epsilon(1e-9));
}

TEST_CASE("equal penalized costs split the soft-min mass evenly") {
  // Costs chosen so V + mu n coincide: (1.0 + 0.5*2, 0.5 + 0.5*3) = (2, 2).
  const SoftminResult r = softmin_arm_distribution(
      std::vector<double>{1.0, 0.5}, std::vector<int>{2, 3}, 0.5, 1.0);
  CHECK(r.distribution[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.distribution[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("soft-min sandwich holds on random arm-cost vectors") {
  const SoftminSuiteResult r = run_softmin_suite(500, 321);
  CHECK(r.sandwich_violations == 0);
}

TEST_CASE("rollout game with a single arm is carried by the dual bound") {
  RolloutGameSpec spec;
  spec.arm_costs = {{0.7}, {0.2}};
  spec.arms = {3};
  spec.bin_shares = {0.6, 0.4};
  spec.mean_budget = 3.0;
  spec.dual_cap = 5.0;
  spec.horizon = 10000;
  const RolloutGameReport r = run_rollout_game(spec);
  // log K = 0: the primal term vanishes from the explicit bound.
  CHECK(r.explicit_bound ==
        doctest::Approx(5.0 * 3.0 / std::sqrt(10000.0)).epsilon(1e-12));
  CHECK(r.measured_gap <= r.explicit_bound + 1e-12);
  CHECK(r.budget_usage == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("rollout game meets its explicit bound on random specs") {
  const RolloutGameSuiteResult r = run_rollout_game_suite(8, 10000, 777);
  CHECK(r.gap_bound_violations == 0);
  CHECK(r.objective_gap_violations == 0);
  CHECK(r.budget_bound_violations == 0);
}

TEST_CASE("budgeted arm LP solves a hand-checkable instance") {
  // Bin 0 prefers its cheap large arm, bin 1 is indifferent to cost but the
  // budget forces mixing: optimum uses arm 2 in bin 1 and mixes bin 0.
  RolloutGameSpec spec;
  spec.arms = {2, 6};
  spec.arm_costs = {{1.0, 0.0}, {0.5, 0.5}};
  spec.bin_shares = {0.5, 0.5};
  spec.mean_budget = 3.0;
  const BudgetedArmOptimum opt = solve_budgeted_arm_lp(spec);
  CHECK(opt.usage <= 3.0 + 1e-12);
  // Feasible usage: bin1 at arm 2 (cost equal, lower usage), bin0 mixes
  // between arms to use the remaining budget: 0.5*(2 + 4t) + 1 = 3 -> t=0.5.
  CHECK(opt.objective == doctest::Approx(0.5 * 0.5 + 0.5 * 0.5).epsilon(1e-9));
  CHECK(opt.policy[0][1] == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("LP optimum lower-bounds random feasible policies") {
  Rng rng(2718);
  for (int i = 0; i < 20; ++i) {
    const RolloutGameSpec spec = RolloutGameSpec::random(3, 4, 100, rng);
    const BudgetedArmOptimum opt = solve_budgeted_arm_lp(spec);
    CHECK(opt.usage <= spec.mean_budget + 1e-9);
    for (int trial = 0; trial < 200; ++trial) {
      // Random feasible policy by rejection.
      std::vector<std::vector<double>> policy(3, std::vector<double>(4));
      double usage = 0.0, objective = 0.0;
      for (std::size_t b = 0; b < 3; ++b) {
        double z = 0.0;
        for (double& p : policy[b]) {
          p = rng.next_double() + 1e-3;
          z += p;
        }
        for (std::size_t a = 0; a < 4; ++a) {
          policy[b][a] /= z;
          usage += spec.bin_shares[b] * policy[b][a] * spec.arms[a];
          objective +=
              spec.bin_shares[b] * policy[b][a] * spec.arm_costs[b][a];
        }
      }
      if (usage <= spec.mean_budget)
        CHECK(objective >= opt.objective - 1e-9);
    }
  }
}

TEST_CASE("all-equal rewards keep replacements inside the bd bound") {
  GrpoOptions options;
  options.answer_count = 4;
  options.advantage_epsilon = 0.5;
  TabularGrpoWorld world({{0, 1, -6.0}}, options);  // essentially solved
  const BoundedDiffReport r =
      bounded_differences_check(world, 0, 4, 2000, 0, 9);
  CHECK(r.violations == 0);
  CHECK(r.max_observed_diff <= r.bd_constant / 4);
}

TEST_CASE("bounded differences and variance contraction on a mixed prompt") {
  GrpoOptions options;
  options.answer_count = 4;
  options.advantage_epsilon = 0.5;
  TabularGrpoWorld world({{0, 2, 0.0}}, options);
  const BoundedDiffReport r =
      bounded_differences_check(world, 0, 4, 20000, 4000, 13);
  CHECK(r.diff_ok);
  CHECK(r.variance_ok);
  CHECK(r.score_bound > 0.0);
  CHECK(r.max_observed_diff > 0.0);
}

TEST_CASE("clipped estimator keeps bounded differences off-snapshot") {
  GrpoOptions options;
  options.answer_count = 4;
  options.advantage_epsilon = 0.5;
  TabularGrpoWorld world({{0, 2, 0.0}}, options);
  std::vector<double> theta(world.policy_logits(0).begin(),
                            world.policy_logits(0).end());
  theta[0] += 0.3;
  theta[2] -= 0.2;
  world.set_policy_logits(0, theta);  // behavior snapshot stays initial
  const BoundedDiffReport r =
      bounded_differences_check_clipped(world, 0, 4, 20000, 29);
  CHECK(r.diff_ok);
  CHECK(r.violations == 0);
}

TEST_CASE("variance proxy for one bin is v / (M n)") {
  const VarianceProxyReport r = batch_variance_proxy(
      std::vector<double>{2.0}, std::vector<double>{1.0},
      std::vector<double>{4.0}, 16);
  CHECK(r.proxy == doctest::Approx(2.0 / (16.0 * 4.0)).epsilon(1e-12));
  CHECK(r.cauchy_schwarz_ok);
}

TEST_CASE("WSE squared never exceeds the variance proxy sum") {
  Rng rng(808);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t b = 2 + rng.next_index(9);
    std::vector<double> v(b), shares(b), n(b);
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      v[j] = 0.05 + 3.0 * rng.next_double();
      shares[j] = rng.next_double() + 0.01;
      n[j] = 1.0 + 10.0 * rng.next_double();
      z += shares[j];
    }
    for (double& s : shares) s /= z;
    const VarianceProxyReport r = batch_variance_proxy(v, shares, n, 8);
    CHECK(r.cauchy_schwarz_ok);
    CHECK(r.wse * r.wse <= r.wse_bound_rhs * (1 + 1e-12) + 1e-15);
  }
}

TEST_CASE("WSE equality holds exactly when v / n is constant") {
  // v_b / n_b = 0.5 for every bin: Cauchy-Schwarz is tight.
  const VarianceProxyReport r = batch_variance_proxy(
      std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{0.2, 0.3, 0.5},
      std::vector<double>{2.0, 4.0, 6.0}, 4);
  CHECK(r.wse * r.wse == doctest::Approx(r.wse_bound_rhs).epsilon(1e-12));
}
