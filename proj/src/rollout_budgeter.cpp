#include "gdro/rollout_budgeter.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace gdro {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

RolloutBudgeter::RolloutBudgeter(int bins, BudgeterOptions options)
    : bins_(bins), options_(options) {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  if (options_.arm_min < 1 || options_.arm_max < options_.arm_min)
    throw std::invalid_argument("invalid arm range");
  if (options_.arm_ema_decay <= 0.0 || options_.arm_ema_decay > 1.0)
    throw std::invalid_argument("arm_ema_decay must be in (0, 1]");
  if (options_.arm_exploration < 0.0 || options_.arm_exploration > 1.0)
    throw std::invalid_argument("arm_exploration must be in [0, 1]");
  if (options_.dual_rate < 0.0)
    throw std::invalid_argument("dual_rate must be >= 0");
  if (options_.dual_cap < 0.0)
    throw std::invalid_argument("dual_cap must be >= 0");
  scores_.assign(static_cast<std::size_t>(bins),
                 std::vector<double>(static_cast<std::size_t>(arm_count()),
                                     0.0));
}

std::span<const double> RolloutBudgeter::arm_scores(int bin) const {
  if (bin < 0 || bin >= bins_) throw std::out_of_range("bin out of range");
  return scores_[static_cast<std::size_t>(bin)];
}

double RolloutBudgeter::arm_loss(double bin_utility_estimate, int arm) const {
  if (arm < options_.arm_min || arm > options_.arm_max)
    throw std::invalid_argument("arm outside arm set");
  return -bin_utility_estimate + mu_ * static_cast<double>(arm);
}

std::vector<double> RolloutBudgeter::arm_distribution(int bin) const {
  if (bin < 0 || bin >= bins_) throw std::out_of_range("bin out of range");
  const std::vector<double>& s = scores_[static_cast<std::size_t>(bin)];
  const int k = arm_count();
  std::vector<double> p(static_cast<std::size_t>(k));
  double best = kNegInf;
  for (int i = 0; i < k; ++i)
    best = std::max(best, -options_.arm_learning_rate * s[i]);
  double z = 0.0;
  for (int i = 0; i < k; ++i) {
    p[i] = std::exp(-options_.arm_learning_rate * s[i] - best);
    z += p[i];
  }
  const double gamma = options_.arm_exploration;
  for (int i = 0; i < k; ++i)
    p[i] = (1.0 - gamma) * p[i] / z + gamma / static_cast<double>(k);
  return p;
}

double RolloutBudgeter::arm_probability(int bin, int arm) const {
  if (arm < options_.arm_min || arm > options_.arm_max)
    throw std::invalid_argument("arm outside arm set");
  return arm_distribution(bin)[static_cast<std::size_t>(arm -
                                                        options_.arm_min)];
}

void RolloutBudgeter::update_arm_scores(int bin, int chosen_arm,
                                        double observed_loss) {
  if (!std::isfinite(observed_loss))
    throw std::invalid_argument("non-finite observed loss");
  const double p = arm_probability(bin, chosen_arm);
  const double floor =
      options_.arm_exploration / static_cast<double>(arm_count());
  if (p < floor - 1e-12)
    throw std::logic_error("arm probability below exploration floor");
  const double estimate = observed_loss / p;
  double& s = scores_[static_cast<std::size_t>(bin)]
                     [static_cast<std::size_t>(chosen_arm - options_.arm_min)];
  s = (1.0 - options_.arm_ema_decay) * s + options_.arm_ema_decay * estimate;
}

AllocationResult RolloutBudgeter::select_allocation(
    std::span<const int> bin_counts, int batch_size) const {
  if (static_cast<int>(bin_counts.size()) != bins_)
    throw std::invalid_argument("bin_counts size mismatch");
  long total_count = 0;
  for (int c : bin_counts) {
    if (c < 0) throw std::invalid_argument("negative bin count");
    total_count += c;
  }
  if (total_count != batch_size)
    throw std::invalid_argument("bin counts must sum to batch size");

  std::vector<int> active;
  for (int b = 0; b < bins_; ++b)
    if (bin_counts[static_cast<std::size_t>(b)] > 0) active.push_back(b);
  if (active.empty()) throw std::invalid_argument("no active bins");

  const double target_real =
      options_.mean_budget * static_cast<double>(batch_size);
  const long target = std::lround(target_real);
  if (std::abs(target_real - static_cast<double>(target)) > 1e-9)
    throw std::invalid_argument("mean_budget * batch_size must be integral");

  const int k = arm_count();
  const std::size_t n_active = active.size();
  long max_total = 0;
  for (int b : active)
    max_total += static_cast<long>(bin_counts[static_cast<std::size_t>(b)]) *
                 options_.arm_max;

  // Per-active-bin weighted log-probabilities.
  std::vector<std::vector<double>> logp(n_active);
  for (std::size_t i = 0; i < n_active; ++i) {
    const std::vector<double> p = arm_distribution(active[i]);
    logp[i].resize(static_cast<std::size_t>(k));
    const double w =
        options_.count_weighted_objective
            ? static_cast<double>(
                  bin_counts[static_cast<std::size_t>(active[i])])
            : 1.0;
    for (int a = 0; a < k; ++a)
      logp[i][static_cast<std::size_t>(a)] =
          w * std::log(p[static_cast<std::size_t>(a)]);
  }

  // Suffix DP over accumulated rollout totals: suffix[i][r] is the best
  // objective bins i..end can achieve while consuming exactly r rollouts.
  const std::size_t width = static_cast<std::size_t>(max_total) + 1;
  std::vector<std::vector<double>> suffix(n_active + 1,
                                          std::vector<double>(width, kNegInf));
  suffix[n_active][0] = 0.0;
  for (std::size_t i = n_active; i-- > 0;) {
    const long c = bin_counts[static_cast<std::size_t>(active[i])];
    for (std::size_t r = 0; r < width; ++r) {
      double best = kNegInf;
      for (int a = 0; a < k; ++a) {
        const long used = c * static_cast<long>(arm_value(a));
        if (used > static_cast<long>(r)) break;
        const double below = suffix[i + 1][r - static_cast<std::size_t>(used)];
        if (below == kNegInf) continue;
        const double cand = logp[i][static_cast<std::size_t>(a)] + below;
        if (cand > best) best = cand;
      }
      suffix[i][r] = best;
    }
  }

  // Achievable total nearest the target, ties toward the lower total.
  long chosen_total = -1;
  long best_dist = std::numeric_limits<long>::max();
  for (std::size_t r = 0; r < width; ++r) {
    if (suffix[0][r] == kNegInf) continue;
    const long dist = std::labs(static_cast<long>(r) - target);
    if (dist < best_dist ||
        (dist == best_dist && static_cast<long>(r) < chosen_total)) {
      best_dist = dist;
      chosen_total = static_cast<long>(r);
    }
  }

  AllocationResult result;
  result.feasible = chosen_total == target;
  result.arms.assign(static_cast<std::size_t>(bins_), options_.arm_min);

  // Greedy reconstruction; picking the smallest arm that still attains the
  // suffix optimum yields the lexicographically smallest optimal vector.
  long remaining = chosen_total;
  double objective = 0.0;
  for (std::size_t i = 0; i < n_active; ++i) {
    const long c = bin_counts[static_cast<std::size_t>(active[i])];
    const double want = suffix[i][static_cast<std::size_t>(remaining)];
    int chosen = -1;
    for (int a = 0; a < k; ++a) {
      const long used = c * static_cast<long>(arm_value(a));
      if (used > remaining) break;
      const double below =
          suffix[i + 1][static_cast<std::size_t>(remaining - used)];
      if (below == kNegInf) continue;
      if (logp[i][static_cast<std::size_t>(a)] + below == want) {
        chosen = a;
        break;
      }
    }
    if (chosen < 0) throw std::logic_error("allocation reconstruction failed");
    result.arms[static_cast<std::size_t>(active[i])] = arm_value(chosen);
    objective += logp[i][static_cast<std::size_t>(chosen)];
    remaining -= c * static_cast<long>(arm_value(chosen));
  }
  result.objective = objective;
  result.realized_mean =
      static_cast<double>(chosen_total) / static_cast<double>(batch_size);
  return result;
}

void RolloutBudgeter::update_dual(double realized_mean) {
  mu_ = std::clamp(
      mu_ + options_.dual_rate * (realized_mean - options_.mean_budget), 0.0,
      options_.dual_cap);
}

void RolloutBudgeter::set_dual(double mu) {
  mu_ = std::clamp(mu, 0.0, options_.dual_cap);
}

void RolloutBudgeter::set_arm_scores(int bin, std::span<const double> scores) {
  if (bin < 0 || bin >= bins_) throw std::out_of_range("bin out of range");
  if (static_cast<int>(scores.size()) != arm_count())
    throw std::invalid_argument("score vector size mismatch");
  std::copy(scores.begin(), scores.end(),
            scores_[static_cast<std::size_t>(bin)].begin());
}

const char* RolloutBudgeter::csv_header() {
  return "step,bin,count,chosen_arm,p_chosen,mu,realized_mean,feasible";
}

namespace {
void put_double(std::ostream& out, double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.write(buf, len);
}
}  // namespace

void RolloutBudgeter::append_csv(std::ostream& out, long step,
                                 std::span<const int> counts,
                                 const AllocationResult& allocation) const {
  for (int b = 0; b < bins_; ++b) {
    const int count = counts[static_cast<std::size_t>(b)];
    const int arm = allocation.arms[static_cast<std::size_t>(b)];
    out << step << ',' << b << ',' << count << ',' << arm << ',';
    put_double(out, count > 0 ? arm_probability(b, arm) : 0.0);
    out << ',';
    put_double(out, mu_);
    out << ',';
    put_double(out, allocation.realized_mean);
    out << ',' << (allocation.feasible ? 1 : 0) << '\n';
  }
}

}  // namespace gdro
