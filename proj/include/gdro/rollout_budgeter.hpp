#pragma once

#include <iosfwd>
#include <span>
#include <vector>

namespace gdro {

struct BudgeterOptions {
  int arm_min = 2;
  int arm_max = 12;
  double arm_ema_decay = 0.4;
  double arm_learning_rate = 0.65;  // eta
  double arm_exploration = 0.01;    // gamma_arm
  double mean_budget = 4.0;         // n-bar
  double dual_rate = 0.05;          // alpha_mu
  double dual_cap = 10.0;           // mu_max
  // Weight each bin's log-probability by its prompt count in the DP
  // objective. The unweighted variant is kept behind this switch.
  bool count_weighted_objective = true;
};

struct AllocationResult {
  // Chosen arm per bin; bins with zero count are pinned to arm_min.
  std::vector<int> arms;
  double realized_mean = 0.0;  // sum_b count_b * n_b / M
  bool feasible = false;       // total == round(mean_budget * M)
  double objective = 0.0;      // maximized sum of chosen log-probabilities
};

// Per-bin bandits over discrete rollout arms with a shared dual variable
// (shadow price of compute) and an exact DP selection step that matches the
// mean-rollout budget.
class RolloutBudgeter {
 public:
  RolloutBudgeter(int bins, BudgeterOptions options = {});

  int bins() const { return bins_; }
  int arm_count() const { return options_.arm_max - options_.arm_min + 1; }
  int arm_value(int arm_index) const { return options_.arm_min + arm_index; }
  const BudgeterOptions& options() const { return options_; }
  double dual() const { return mu_; }
  std::span<const double> arm_scores(int bin) const;

  // Penalized bandit loss for playing `arm` in a bin with utility estimate J:
  // -J + mu * arm.
  double arm_loss(double bin_utility_estimate, int arm) const;

  // Importance-weighted update: the observed loss divided by the probability
  // of the chosen arm feeds an EMA on that arm's score; other arms keep their
  // scores. Throws std::logic_error if the stored probability is below the
  // exploration floor (cannot happen through this class's own distribution).
  void update_arm_scores(int bin, int chosen_arm, double observed_loss);

  // Exploration-mixed softmax over -eta * scores (low loss -> high mass).
  std::vector<double> arm_distribution(int bin) const;
  double arm_probability(int bin, int arm) const;

  // Exact budget-matching selection: maximizes the (count-weighted) sum of
  // log p_b(n_b) over bins with count > 0 subject to
  // sum_b count_b * n_b == mean_budget * M. Infeasible targets fall back to
  // the nearest achievable total (ties toward the lower total) with
  // feasible=false. Among equal-objective allocations the lexicographically
  // smallest arm vector wins.
  AllocationResult select_allocation(std::span<const int> bin_counts,
                                     int batch_size) const;

  // mu <- clamp(mu + alpha_mu * (realized_mean - mean_budget), 0, mu_max).
  void update_dual(double realized_mean);
  void set_dual(double mu);  // test hook, clamped to [0, dual_cap]
  void set_arm_scores(int bin, std::span<const double> scores);  // test hook

  static const char* csv_header();
  // step,bin,count,chosen_arm,p_chosen,mu,realized_mean,feasible
  void append_csv(std::ostream& out, long step, std::span<const int> counts,
                  const AllocationResult& allocation) const;

 private:
  int bins_;
  BudgeterOptions options_;
  std::vector<std::vector<double>> scores_;  // [bin][arm]
  double mu_ = 0.0;
};

}  // namespace gdro
