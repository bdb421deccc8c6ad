#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gdro/rng.hpp"
#include "gdro/synthetic_grpo.hpp"

namespace gdro {

// ---------------------------------------------------------------------------
// Entropic surrogate (log-sum-exp risk)
// ---------------------------------------------------------------------------

struct LseResult {
  double value = 0.0;                 // (1/eta) log sum exp(eta * L_b)
  std::vector<double> distribution;   // softmax(eta * L)
  // | entropic objective at the returned distribution - value |.
  double variational_residual = 0.0;
};

LseResult lse_value_and_best_response(std::span<const double> losses,
                                      double eta);

// sum_b softmax(eta L)(b) * grad L_b. One gradient vector per group, common
// dimension; throws std::invalid_argument on mismatch.
std::vector<double> entropic_gradient(
    std::span<const double> losses,
    const std::vector<std::vector<double>>& loss_gradients, double eta);

double shannon_entropy(std::span<const double> dist);

// ---------------------------------------------------------------------------
// Convex no-regret game
// ---------------------------------------------------------------------------

// Sphere quadratic a * ||theta - center||^2 + offset; convex, exactly
// boundable on the ball.
struct QuadraticGroupLoss {
  double curvature = 1.0;
  std::vector<double> center;
  double offset = 0.0;

  double value(std::span<const double> theta) const;
  std::vector<double> gradient(std::span<const double> theta) const;
  double min_on_ball(double radius) const;
  double max_on_ball(double radius) const;
  double lipschitz_on_ball(double radius) const;
};

struct ConvexGameSpec {
  int dimension = 2;
  double radius = 1.0;  // Theta = { ||theta|| <= radius }, diameter D = 2r
  std::vector<QuadraticGroupLoss> groups;
  long horizon = 10000;
  double learner_step = 0.0;     // 0 -> D / (G_sg sqrt(T))
  double adversary_step = 0.0;   // 0 -> sqrt(8 log B / T) / M
  double gradient_noise = 0.0;   // radius of bounded spherical learner noise
  double loss_noise_frac = 0.0;  // two-point adversary feedback noise scale

  double loss_bound() const;       // M: max_b max_ball L_b (losses in [0, M])
  double lipschitz_bound() const;  // G
  double noise_second_moment_bound() const;  // G_sg = G + gradient_noise

  // Random instance with losses shifted to min 0 on the ball.
  static ConvexGameSpec random(int dimension, int group_count, long horizon,
                               Rng& rng);
};

struct ConvexGameReport {
  std::vector<double> averaged_theta;
  std::vector<double> averaged_q;
  std::vector<double> final_theta;
  double max_side = 0.0;      // max_b L_b(avg theta)
  double min_side = 0.0;      // min_theta f(theta, avg q)
  double measured_gap = 0.0;
  double bound = 0.0;         // D^2/(2 eta_th T) + eta_th Gsg^2/2
                              //   + log B/(eta_q T) + eta_q M^2/8
  double learner_step = 0.0;
  double adversary_step = 0.0;
  bool valid = false;         // inner solver converged
};

ConvexGameReport run_convex_game(const ConvexGameSpec& spec,
                                 std::uint64_t seed);

// Accelerated projected gradient for min_theta sum_b q_b L_b(theta) over the
// ball; independent of the game loop. Tolerance on the objective value.
struct InnerSolveResult {
  std::vector<double> theta;
  double value = 0.0;
  bool converged = false;
};
InnerSolveResult minimize_mixture_on_ball(const ConvexGameSpec& spec,
                                          std::span<const double> q,
                                          double tolerance = 1e-8);

// ---------------------------------------------------------------------------
// Square-root allocation law
// ---------------------------------------------------------------------------

struct VarianceAllocQuery {
  std::vector<double> variances;  // v_b > 0 on active bins
  std::vector<double> shares;     // qbar, a distribution
  double budget = 4.0;            // nbar > 0
};

struct SqrtAllocationResult {
  std::vector<double> allocation;  // n*_b (0 where share = 0 and v = 0)
  double optimal_value = 0.0;      // (sum qbar sqrt(v))^2 / nbar
  double uniform_value = 0.0;      // sum qbar v / nbar
};

SqrtAllocationResult sqrt_allocation(const VarianceAllocQuery& query);

// Projected-gradient numerical minimizer of sum q v / n subject to
// sum q n = budget, n > 0. Independent oracle for the closed form.
std::vector<double> minimize_variance_allocation(const VarianceAllocQuery& q,
                                                 double tolerance = 1e-12,
                                                 long max_iterations = 200000);

// argmin_{n > 0} v/n + mu n = sqrt(v / mu). Throws for mu <= 0 or v <= 0.
double shadow_price_best_response(double variance, double mu);

// ---------------------------------------------------------------------------
// Soft-min arm distribution
// ---------------------------------------------------------------------------

struct SoftminResult {
  std::vector<double> distribution;  // p(n) propto exp(-eta (V(n) + mu n))
  double value = 0.0;                // soft-min of the penalized costs
  double min_cost = 0.0;
  bool sandwich_ok = false;  // value <= min <= value + log K / eta
};

SoftminResult softmin_arm_distribution(std::span<const double> arm_costs,
                                       std::span<const int> arms, double mu,
                                       double eta);

// ---------------------------------------------------------------------------
// Rollout primal-dual game
// ---------------------------------------------------------------------------

struct RolloutGameSpec {
  std::vector<std::vector<double>> arm_costs;  // V_b(n) >= 0, B x K
  std::vector<int> arms;                       // compute cost a(n) = n
  std::vector<double> bin_shares;              // qbar
  double mean_budget = 4.0;                    // nbar
  double dual_cap = 10.0;                      // mu_max
  long horizon = 10000;
  bool explicit_steps = true;  // derive eta_p, eta_mu from the bounds
  double primal_step = 0.0;
  double dual_step = 0.0;

  double cost_bound() const;     // V_max
  double compute_bound() const;  // a_max
  static RolloutGameSpec random(int bins, int arm_count, long horizon,
                                Rng& rng);
};

struct RolloutGameReport {
  std::vector<std::vector<double>> averaged_policy;
  double averaged_dual = 0.0;
  double measured_gap = 0.0;
  double explicit_bound = 0.0;
  double objective = 0.0;          // sum qbar E_pbar V
  double optimum_objective = 0.0;  // brute-force constrained optimum
  double objective_gap = 0.0;
  double budget_usage = 0.0;
  double budget_violation = 0.0;        // [usage - nbar]_+
  double budget_violation_bound = 0.0;  // (V_max + bound) / mu_max
  double primal_step = 0.0;
  double dual_step = 0.0;
};

RolloutGameReport run_rollout_game(const RolloutGameSpec& spec);

// Exact optimum of min sum_b qbar_b E_{p_b} V_b s.t. sum_b qbar_b E_{p_b} a
// <= nbar over the product of simplices, via a Lagrangian breakpoint sweep
// (at most one bin mixes two arms at the optimum).
struct BudgetedArmOptimum {
  std::vector<std::vector<double>> policy;
  double objective = 0.0;
  double usage = 0.0;
};
BudgetedArmOptimum solve_budgeted_arm_lp(const RolloutGameSpec& spec);

// ---------------------------------------------------------------------------
// Bounded differences / Efron-Stein
// ---------------------------------------------------------------------------

struct BoundedDiffReport {
  double score_bound = 0.0;    // G_pi, exact for the softmax policy
  double bd_constant = 0.0;    // C_b = G_pi (3R^2/eps^2 + 5R/eps)
  double reward_range = 0.0;   // R
  long trials = 0;
  double max_observed_diff = 0.0;
  long violations = 0;
  double mc_variance = 0.0;
  double variance_bound = 0.0;  // C_b^2 / (2n)
  double variance_stderr = 0.0;
  bool diff_ok = false;
  bool variance_ok = false;  // mc_variance <= bound + 3 * stderr
  std::string offending;     // serialized first violating instance
};

// Trials of single-coordinate rollout replacement for the normalized
// unclipped estimator with rewards mapped to {0, R}; plus a Monte Carlo check
// of the 1/n variance bound. Uses the world's advantage_epsilon.
BoundedDiffReport bounded_differences_check(const TabularGrpoWorld& world,
                                            PromptUid uid, int n, long trials,
                                            long variance_groups,
                                            std::uint64_t seed);

// Same replacement trials for the clipped estimator, with the constant scaled
// by the ratio bound (clipping keeps the bounded-differences form).
BoundedDiffReport bounded_differences_check_clipped(
    const TabularGrpoWorld& world, PromptUid uid, int n, long trials,
    std::uint64_t seed);

// Unclipped normalized prompt-gradient estimator used by the checks above.
std::vector<double> normalized_prompt_gradient(std::span<const double> probs,
                                               int correct_answer,
                                               std::span<const int> answers,
                                               double reward_hi, double eps);

// ---------------------------------------------------------------------------
// Batch variance proxy / weighted standard error
// ---------------------------------------------------------------------------

struct VarianceProxyReport {
  double proxy = 0.0;          // (1/M) sum qbar v / n
  double wse = 0.0;            // sum qbar sqrt(v / n)
  double wse_bound_rhs = 0.0;  // sum qbar v / n
  bool cauchy_schwarz_ok = false;
};

VarianceProxyReport batch_variance_proxy(std::span<const double> variances,
                                         std::span<const double> shares,
                                         std::span<const double> allocation,
                                         int batch_size);

}  // namespace gdro
