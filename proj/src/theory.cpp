#include "gdro/theory.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace gdro {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void project_ball(std::vector<double>& theta, double radius) {
  const double n = norm2(theta);
  if (n > radius) {
    const double scale = radius / n;
    for (double& v : theta) v *= scale;
  }
}

std::vector<double> softmax_scaled(std::span<const double> values,
                                   double scale) {
  std::vector<double> out(values.size());
  double m = -kInf;
  for (double v : values) m = std::max(m, scale * v);
  double z = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = std::exp(scale * values[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

void check_distribution(std::span<const double> dist, const char* what) {
  double s = 0.0;
  for (double v : dist) {
    if (v < 0.0) throw std::invalid_argument(std::string(what) + ": negative");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + ": does not sum to 1");
}

}  // namespace

// ---------------------------------------------------------------------------
// Entropic surrogate
// ---------------------------------------------------------------------------

double shannon_entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

LseResult lse_value_and_best_response(std::span<const double> losses,
                                      double eta) {
  if (losses.empty()) throw std::invalid_argument("empty loss vector");
  if (eta <= 0.0) throw std::invalid_argument("eta must be > 0");
  for (double l : losses)
    if (!std::isfinite(l)) throw std::invalid_argument("non-finite loss");

  LseResult result;
  double m = -kInf;
  for (double l : losses) m = std::max(m, l);
  double z = 0.0;
  for (double l : losses) z += std::exp(eta * (l - m));
  result.value = m + std::log(z) / eta;
  result.distribution = softmax_scaled(losses, eta);

  // Variational identity: the entropic objective at the softmax equals the
  // log-sum-exp value.
  const double objective = dot(result.distribution, losses) +
                           shannon_entropy(result.distribution) / eta;
  result.variational_residual = std::abs(objective - result.value);
  return result;
}

std::vector<double> entropic_gradient(
    std::span<const double> losses,
    const std::vector<std::vector<double>>& loss_gradients, double eta) {
  if (losses.size() != loss_gradients.size())
    throw std::invalid_argument("losses / gradients size mismatch");
  if (loss_gradients.empty()) throw std::invalid_argument("no groups");
  const std::size_t d = loss_gradients[0].size();
  for (const auto& g : loss_gradients)
    if (g.size() != d)
      throw std::invalid_argument("gradient dimension mismatch");

  const std::vector<double> q = softmax_scaled(losses, eta);
  std::vector<double> out(d, 0.0);
  for (std::size_t b = 0; b < q.size(); ++b)
    for (std::size_t i = 0; i < d; ++i) out[i] += q[b] * loss_gradients[b][i];
  return out;
}

// ---------------------------------------------------------------------------
// Convex game
// ---------------------------------------------------------------------------

double QuadraticGroupLoss::value(std::span<const double> theta) const {
  double s = 0.0;
  for (std::size_t i = 0; i < center.size(); ++i) {
    const double d = theta[i] - center[i];
    s += d * d;
  }
  return curvature * s + offset;
}

std::vector<double> QuadraticGroupLoss::gradient(
    std::span<const double> theta) const {
  std::vector<double> g(center.size());
  for (std::size_t i = 0; i < center.size(); ++i)
    g[i] = 2.0 * curvature * (theta[i] - center[i]);
  return g;
}

double QuadraticGroupLoss::min_on_ball(double radius) const {
  const double cn = norm2(center);
  if (cn <= radius) return offset;
  const double d = cn - radius;
  return curvature * d * d + offset;
}

double QuadraticGroupLoss::max_on_ball(double radius) const {
  const double cn = norm2(center);
  const double d = cn + radius;
  return curvature * d * d + offset;
}

double QuadraticGroupLoss::lipschitz_on_ball(double radius) const {
  return 2.0 * curvature * (radius + norm2(center));
}

double ConvexGameSpec::loss_bound() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_on_ball(radius));
  return m;
}

double ConvexGameSpec::lipschitz_bound() const {
  double g = 0.0;
  for (const auto& q : groups) g = std::max(g, q.lipschitz_on_ball(radius));
  return g;
}

double ConvexGameSpec::noise_second_moment_bound() const {
  return lipschitz_bound() + gradient_noise;
}

ConvexGameSpec ConvexGameSpec::random(int dimension, int group_count,
                                      long horizon, Rng& rng) {
  if (dimension < 1 || group_count < 1)
    throw std::invalid_argument("bad convex game shape");
  ConvexGameSpec spec;
  spec.dimension = dimension;
  spec.radius = 0.5 + 1.5 * rng.next_double();
  spec.horizon = horizon;
  spec.groups.resize(static_cast<std::size_t>(group_count));
  for (auto& g : spec.groups) {
    g.curvature = 0.3 + 1.2 * rng.next_double();
    g.center.resize(static_cast<std::size_t>(dimension));
    // Center anywhere within 1.5x the ball radius.
    double n2 = 0.0;
    for (double& c : g.center) {
      c = rng.next_gaussian();
      n2 += c * c;
    }
    const double target =
        1.5 * spec.radius * std::pow(rng.next_double(), 1.0 / dimension);
    const double scale = n2 > 0.0 ? target / std::sqrt(n2) : 0.0;
    for (double& c : g.center) c *= scale;
    g.offset = 0.5 * rng.next_double();
  }
  // Common shift so that losses are in [0, M] on the ball.
  double min_val = kInf;
  for (const auto& g : spec.groups)
    min_val = std::min(min_val, g.min_on_ball(spec.radius));
  for (auto& g : spec.groups) g.offset -= min_val;

  spec.gradient_noise = 0.2 * spec.lipschitz_bound();
  spec.loss_noise_frac = 0.25;
  return spec;
}

InnerSolveResult minimize_mixture_on_ball(const ConvexGameSpec& spec,
                                          std::span<const double> q,
                                          double tolerance) {
  if (q.size() != spec.groups.size())
    throw std::invalid_argument("mixture size mismatch");
  const std::size_t d = static_cast<std::size_t>(spec.dimension);

  const auto value = [&](std::span<const double> theta) {
    double v = 0.0;
    for (std::size_t b = 0; b < q.size(); ++b)
      if (q[b] > 0.0) v += q[b] * spec.groups[b].value(theta);
    return v;
  };
  const auto gradient = [&](std::span<const double> theta,
                            std::vector<double>& g) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t b = 0; b < q.size(); ++b) {
      if (q[b] <= 0.0) continue;
      const double coef = 2.0 * q[b] * spec.groups[b].curvature;
      for (std::size_t i = 0; i < d; ++i)
        g[i] += coef * (theta[i] - spec.groups[b].center[i]);
    }
  };

  double smooth = 0.0;
  for (std::size_t b = 0; b < q.size(); ++b)
    smooth += 2.0 * q[b] * spec.groups[b].curvature;
  if (smooth <= 0.0) {
    // All-zero mixture weights on curvature: constant objective.
    InnerSolveResult r;
    r.theta.assign(d, 0.0);
    r.value = value(r.theta);
    r.converged = true;
    return r;
  }
  const double step = 1.0 / smooth;

  InnerSolveResult r;
  r.theta.assign(d, 0.0);
  std::vector<double> momentum = r.theta;
  std::vector<double> prev = r.theta;
  std::vector<double> grad(d, 0.0);
  double t_accel = 1.0;
  double last_value = value(r.theta);

  for (int iter = 0; iter < 10000; ++iter) {
    gradient(momentum, grad);
    prev = r.theta;
    for (std::size_t i = 0; i < d; ++i)
      r.theta[i] = momentum[i] - step * grad[i];
    project_ball(r.theta, spec.radius);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t_accel * t_accel));
    const double beta = (t_accel - 1.0) / t_next;
    for (std::size_t i = 0; i < d; ++i)
      momentum[i] = r.theta[i] + beta * (r.theta[i] - prev[i]);
    t_accel = t_next;

    const double v = value(r.theta);
    // Projected-gradient residual at the current point.
    gradient(r.theta, grad);
    std::vector<double> probe(d);
    for (std::size_t i = 0; i < d; ++i) probe[i] = r.theta[i] - step * grad[i];
    project_ball(probe, spec.radius);
    double residual = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double delta = (r.theta[i] - probe[i]) * smooth;
      residual += delta * delta;
    }
    if (std::sqrt(residual) < tolerance &&
        std::abs(v - last_value) < tolerance) {
      r.value = v;
      r.converged = true;
      return r;
    }
    last_value = v;
  }
  r.value = value(r.theta);
  r.converged = false;
  return r;
}

ConvexGameReport run_convex_game(const ConvexGameSpec& spec,
                                 std::uint64_t seed) {
  const std::size_t d = static_cast<std::size_t>(spec.dimension);
  const std::size_t b_count = spec.groups.size();
  if (b_count == 0) throw std::invalid_argument("no groups");
  const long t_max = spec.horizon;
  if (t_max < 1) throw std::invalid_argument("horizon must be >= 1");

  const double diameter = 2.0 * spec.radius;
  const double m_bound = spec.loss_bound();
  const double g_sg = spec.noise_second_moment_bound();
  const double sqrt_t = std::sqrt(static_cast<double>(t_max));

  ConvexGameReport report;
  report.learner_step = spec.learner_step > 0.0
                            ? spec.learner_step
                            : diameter / (g_sg * sqrt_t);
  report.adversary_step =
      spec.adversary_step > 0.0
          ? spec.adversary_step
          : (b_count > 1 && m_bound > 0.0
                 ? std::sqrt(8.0 * std::log(static_cast<double>(b_count)) /
                             static_cast<double>(t_max)) /
                       m_bound
                 : 0.0);

  Rng rng = Rng::stream(seed, 0x636f6e76ULL);

  std::vector<double> theta(d, 0.0);
  std::vector<double> log_w(b_count, 0.0);
  std::vector<double> avg_theta(d, 0.0);
  std::vector<double> avg_q(b_count, 0.0);
  std::vector<double> grad(d), noise(d), losses(b_count);

  for (long t = 0; t < t_max; ++t) {
    const std::vector<double> q = softmax_scaled(log_w, 1.0);
    for (std::size_t i = 0; i < d; ++i) avg_theta[i] += theta[i];
    for (std::size_t b = 0; b < b_count; ++b) avg_q[b] += q[b];

    // Learner gradient with bounded spherical noise.
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t b = 0; b < b_count; ++b) {
      if (q[b] <= 0.0) continue;
      const double coef = 2.0 * q[b] * spec.groups[b].curvature;
      for (std::size_t i = 0; i < d; ++i)
        grad[i] += coef * (theta[i] - spec.groups[b].center[i]);
    }
    if (spec.gradient_noise > 0.0) {
      double n2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        noise[i] = rng.next_gaussian();
        n2 += noise[i] * noise[i];
      }
      const double target = spec.gradient_noise *
                            std::pow(rng.next_double(), 1.0 / spec.dimension);
      const double scale = n2 > 0.0 ? target / std::sqrt(n2) : 0.0;
      for (std::size_t i = 0; i < d; ++i) grad[i] += scale * noise[i];
    }

    // Adversary feedback: unbiased two-point noise that stays in [0, M].
    for (std::size_t b = 0; b < b_count; ++b) {
      const double l = spec.groups[b].value(theta);
      double delta = 0.0;
      if (spec.loss_noise_frac > 0.0) {
        delta = spec.loss_noise_frac *
                std::max(0.0, std::min(l, m_bound - l));
        if (rng.next_u64() & 1ULL) delta = -delta;
      }
      losses[b] = l + delta;
    }

    for (std::size_t i = 0; i < d; ++i)
      theta[i] -= report.learner_step * grad[i];
    project_ball(theta, spec.radius);
    if (report.adversary_step > 0.0)
      for (std::size_t b = 0; b < b_count; ++b)
        log_w[b] += report.adversary_step * losses[b];
  }

  const double inv_t = 1.0 / static_cast<double>(t_max);
  for (double& v : avg_theta) v *= inv_t;
  for (double& v : avg_q) v *= inv_t;
  report.averaged_theta = avg_theta;
  report.averaged_q = avg_q;
  report.final_theta = theta;

  report.max_side = -kInf;
  for (const auto& g : spec.groups)
    report.max_side = std::max(report.max_side, g.value(avg_theta));
  const InnerSolveResult inner = minimize_mixture_on_ball(spec, avg_q, 1e-8);
  report.min_side = inner.value;
  report.valid = inner.converged;
  report.measured_gap = report.max_side - report.min_side;

  const double t_d = static_cast<double>(t_max);
  report.bound =
      diameter * diameter / (2.0 * report.learner_step * t_d) +
      report.learner_step * g_sg * g_sg / 2.0;
  if (b_count > 1 && report.adversary_step > 0.0) {
    report.bound += std::log(static_cast<double>(b_count)) /
                        (report.adversary_step * t_d) +
                    report.adversary_step * m_bound * m_bound / 8.0;
  }
  return report;
}

// ---------------------------------------------------------------------------
// Square-root allocation
// ---------------------------------------------------------------------------

SqrtAllocationResult sqrt_allocation(const VarianceAllocQuery& query) {
  if (query.variances.size() != query.shares.size())
    throw std::invalid_argument("variances / shares size mismatch");
  if (query.budget <= 0.0) throw std::invalid_argument("budget must be > 0");
  check_distribution(query.shares, "shares");

  double denom = 0.0;
  for (std::size_t b = 0; b < query.shares.size(); ++b) {
    if (query.shares[b] <= 0.0) continue;
    if (query.variances[b] <= 0.0)
      throw std::invalid_argument("non-positive variance on active bin");
    denom += query.shares[b] * std::sqrt(query.variances[b]);
  }
  if (denom <= 0.0) throw std::invalid_argument("no active bins");

  SqrtAllocationResult result;
  result.allocation.assign(query.shares.size(), 0.0);
  double uniform = 0.0;
  for (std::size_t b = 0; b < query.shares.size(); ++b) {
    if (query.shares[b] <= 0.0) continue;
    result.allocation[b] =
        query.budget * std::sqrt(query.variances[b]) / denom;
    uniform += query.shares[b] * query.variances[b];
  }
  result.optimal_value = denom * denom / query.budget;
  result.uniform_value = uniform / query.budget;
  return result;
}

std::vector<double> minimize_variance_allocation(const VarianceAllocQuery& q,
                                                 double tolerance,
                                                 long max_iterations) {
  check_distribution(q.shares, "shares");
  const std::size_t b_count = q.shares.size();
  std::vector<std::size_t> active;
  for (std::size_t b = 0; b < b_count; ++b)
    if (q.shares[b] > 0.0) {
      if (q.variances[b] <= 0.0)
        throw std::invalid_argument("non-positive variance on active bin");
      active.push_back(b);
    }
  if (active.empty()) throw std::invalid_argument("no active bins");

  const auto value = [&](const std::vector<double>& n) {
    double v = 0.0;
    for (std::size_t b : active) v += q.shares[b] * q.variances[b] / n[b];
    return v;
  };

  // Variable-metric projected gradient on the budget hyperplane: the descent
  // direction is the Hessian-scaled gradient projected in the Hessian metric,
  // so steps stay feasible and convergence is quadratic near the optimum.
  std::vector<double> n(b_count, 0.0);
  for (std::size_t b : active) n[b] = q.budget;
  std::vector<double> delta(b_count, 0.0), trial(b_count, 0.0);
  double current = value(n);

  for (long iter = 0; iter < max_iterations; ++iter) {
    double qhq = 0.0, qhg = 0.0, grad_dot_delta = 0.0;
    for (std::size_t b : active) {
      const double grad = -q.shares[b] * q.variances[b] / (n[b] * n[b]);
      const double hess = 2.0 * q.shares[b] * q.variances[b] /
                          (n[b] * n[b] * n[b]);
      delta[b] = grad / hess;  // reused below with the multiplier correction
      qhq += q.shares[b] * q.shares[b] / hess;
      qhg += q.shares[b] * delta[b];
    }
    const double nu = -qhg / qhq;
    double decrement = 0.0;
    for (std::size_t b : active) {
      const double grad = -q.shares[b] * q.variances[b] / (n[b] * n[b]);
      const double hess = 2.0 * q.shares[b] * q.variances[b] /
                          (n[b] * n[b] * n[b]);
      delta[b] = -(grad + nu * q.shares[b]) / hess;
      decrement = std::max(decrement, std::abs(delta[b]));
      grad_dot_delta += grad * delta[b];
    }
    if (decrement < tolerance * std::max(1.0, q.budget)) break;

    // Backtracking: shrink until the trial stays interior and satisfies an
    // Armijo decrease (skipped once the predicted decrease is below fp
    // resolution, where full Newton steps are quadratically convergent).
    const bool in_fp_noise =
        std::abs(grad_dot_delta) < 1e-14 * (1.0 + std::abs(current));
    double step = 1.0;
    bool accepted = false;
    for (int bt = 0; bt < 80 && !accepted; ++bt) {
      bool interior = true;
      for (std::size_t b : active) {
        trial[b] = n[b] + step * delta[b];
        if (trial[b] <= 1e-14 * q.budget) interior = false;
      }
      if (interior) {
        const double next = value(trial);
        if (in_fp_noise ||
            next <= current + 1e-4 * step * grad_dot_delta ||
            next <= current) {
          for (std::size_t b : active) n[b] = trial[b];
          current = next;
          accepted = true;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
  }
  return n;
}

double shadow_price_best_response(double variance, double mu) {
  if (variance <= 0.0) throw std::invalid_argument("variance must be > 0");
  if (mu <= 0.0) throw std::invalid_argument("mu must be > 0");
  return std::sqrt(variance / mu);
}

// ---------------------------------------------------------------------------
// Soft-min arm distribution
// ---------------------------------------------------------------------------

SoftminResult softmin_arm_distribution(std::span<const double> arm_costs,
                                       std::span<const int> arms, double mu,
                                       double eta) {
  if (arm_costs.size() != arms.size() || arm_costs.empty())
    throw std::invalid_argument("arm cost / arm size mismatch");
  if (eta <= 0.0) throw std::invalid_argument("eta must be > 0");

  const std::size_t k = arm_costs.size();
  std::vector<double> penalized(k);
  for (std::size_t i = 0; i < k; ++i) {
    penalized[i] = arm_costs[i] + mu * static_cast<double>(arms[i]);
    if (!std::isfinite(penalized[i]))
      throw std::invalid_argument("non-finite arm cost");
  }

  SoftminResult result;
  result.min_cost = *std::min_element(penalized.begin(), penalized.end());
  double z = 0.0;
  result.distribution.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    result.distribution[i] = std::exp(-eta * (penalized[i] - result.min_cost));
    z += result.distribution[i];
  }
  for (double& p : result.distribution) p /= z;
  result.value = result.min_cost - std::log(z) / eta;

  const double gap = std::log(static_cast<double>(k)) / eta;
  const double tol = 1e-12 * (1.0 + std::abs(result.min_cost));
  result.sandwich_ok = result.value <= result.min_cost + tol &&
                       result.min_cost <= result.value + gap + tol;
  return result;
}

// ---------------------------------------------------------------------------
// Rollout primal-dual game
// ---------------------------------------------------------------------------

double RolloutGameSpec::cost_bound() const {
  double v = 0.0;
  for (const auto& row : arm_costs)
    for (double c : row) v = std::max(v, c);
  return v;
}

double RolloutGameSpec::compute_bound() const {
  int a = 0;
  for (int n : arms) a = std::max(a, n);
  return static_cast<double>(a);
}

RolloutGameSpec RolloutGameSpec::random(int bins, int arm_count, long horizon,
                                        Rng& rng) {
  if (bins < 1 || arm_count < 1)
    throw std::invalid_argument("bad rollout game shape");
  RolloutGameSpec spec;
  spec.horizon = horizon;
  spec.arms.resize(static_cast<std::size_t>(arm_count));
  const int n_min = 2;
  for (int i = 0; i < arm_count; ++i)
    spec.arms[static_cast<std::size_t>(i)] = n_min + i;
  const int n_max = spec.arms.back();

  spec.arm_costs.assign(static_cast<std::size_t>(bins),
                        std::vector<double>(static_cast<std::size_t>(arm_count)));
  for (auto& row : spec.arm_costs) {
    // Variance-style decaying costs with a bounded perturbation.
    const double v = 0.1 + 1.9 * rng.next_double();
    for (int i = 0; i < arm_count; ++i) {
      const double n = static_cast<double>(spec.arms[static_cast<std::size_t>(i)]);
      row[static_cast<std::size_t>(i)] = v / n + 0.2 * rng.next_double();
    }
  }

  spec.bin_shares.resize(static_cast<std::size_t>(bins));
  double z = 0.0;
  for (double& s : spec.bin_shares) {
    s = -std::log(std::max(rng.next_double(), 1e-12));
    z += s;
  }
  for (double& s : spec.bin_shares) s /= z;

  spec.mean_budget =
      n_min + (0.8 * (n_max - n_min)) * rng.next_double();
  spec.dual_cap = 1.0 + 7.0 * rng.next_double();
  spec.explicit_steps = true;
  return spec;
}

RolloutGameReport run_rollout_game(const RolloutGameSpec& spec) {
  const std::size_t b_count = spec.arm_costs.size();
  const std::size_t k = spec.arms.size();
  if (b_count == 0 || k == 0) throw std::invalid_argument("empty game");
  if (spec.bin_shares.size() != b_count)
    throw std::invalid_argument("share size mismatch");
  check_distribution(spec.bin_shares, "bin_shares");
  for (const auto& row : spec.arm_costs) {
    if (row.size() != k) throw std::invalid_argument("cost row size mismatch");
    for (double c : row)
      if (!(c >= 0.0)) throw std::invalid_argument("costs must be >= 0");
  }
  const long t_max = spec.horizon;
  if (t_max < 1) throw std::invalid_argument("horizon must be >= 1");

  const double v_max = spec.cost_bound();
  const double a_max = spec.compute_bound();
  const double sqrt_t = std::sqrt(static_cast<double>(t_max));
  const double log_k = std::log(static_cast<double>(k));

  RolloutGameReport report;
  if (spec.explicit_steps) {
    report.primal_step =
        k > 1 ? std::sqrt(8.0 * static_cast<double>(b_count) * log_k) /
                    ((v_max + spec.dual_cap * a_max) * sqrt_t)
              : 0.0;
    report.dual_step = spec.dual_cap / (a_max * sqrt_t);
  } else {
    report.primal_step = spec.primal_step;
    report.dual_step = spec.dual_step;
  }

  std::vector<std::vector<double>> log_w(
      b_count, std::vector<double>(k, 0.0));
  std::vector<std::vector<double>> avg_p(b_count,
                                         std::vector<double>(k, 0.0));
  double mu = 0.0;
  double avg_mu = 0.0;

  std::vector<double> p(k);
  for (long t = 0; t < t_max; ++t) {
    double usage = 0.0;
    for (std::size_t b = 0; b < b_count; ++b) {
      p = softmax_scaled(log_w[b], 1.0);
      for (std::size_t i = 0; i < k; ++i) {
        avg_p[b][i] += p[i];
        usage += spec.bin_shares[b] * p[i] *
                 static_cast<double>(spec.arms[i]);
      }
      // Entropic mirror descent on the bin's arm distribution.
      if (report.primal_step > 0.0) {
        for (std::size_t i = 0; i < k; ++i) {
          const double loss =
              spec.bin_shares[b] *
              (spec.arm_costs[b][i] + mu * static_cast<double>(spec.arms[i]));
          log_w[b][i] -= report.primal_step * loss;
        }
      }
    }
    avg_mu += mu;
    mu = std::clamp(mu + report.dual_step * (usage - spec.mean_budget), 0.0,
                    spec.dual_cap);
  }

  const double inv_t = 1.0 / static_cast<double>(t_max);
  for (auto& row : avg_p)
    for (double& v : row) v *= inv_t;
  avg_mu *= inv_t;
  report.averaged_policy = avg_p;
  report.averaged_dual = avg_mu;

  double objective = 0.0;
  double usage = 0.0;
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t i = 0; i < k; ++i) {
      objective += spec.bin_shares[b] * avg_p[b][i] * spec.arm_costs[b][i];
      usage += spec.bin_shares[b] * avg_p[b][i] *
               static_cast<double>(spec.arms[i]);
    }
  report.objective = objective;
  report.budget_usage = usage;
  report.budget_violation = std::max(0.0, usage - spec.mean_budget);

  const double max_side =
      objective + spec.dual_cap * std::max(0.0, usage - spec.mean_budget);
  double min_side = -avg_mu * spec.mean_budget;
  for (std::size_t b = 0; b < b_count; ++b) {
    double best = kInf;
    for (std::size_t i = 0; i < k; ++i)
      best = std::min(best, spec.arm_costs[b][i] +
                                avg_mu * static_cast<double>(spec.arms[i]));
    min_side += spec.bin_shares[b] * best;
  }
  report.measured_gap = max_side - min_side;

  report.explicit_bound =
      (v_max + spec.dual_cap * a_max) *
          std::sqrt(static_cast<double>(b_count) * log_k /
                    (2.0 * static_cast<double>(t_max))) +
      spec.dual_cap * a_max / sqrt_t;

  const BudgetedArmOptimum opt = solve_budgeted_arm_lp(spec);
  report.optimum_objective = opt.objective;
  report.objective_gap = report.objective - opt.objective;
  report.budget_violation_bound =
      (v_max + report.explicit_bound) / spec.dual_cap;
  return report;
}

BudgetedArmOptimum solve_budgeted_arm_lp(const RolloutGameSpec& spec) {
  const std::size_t b_count = spec.arm_costs.size();
  const std::size_t k = spec.arms.size();
  check_distribution(spec.bin_shares, "bin_shares");

  // Per-bin argmin structure of V_b(n) + lambda * n, swept over the
  // breakpoints where the per-bin winner changes. At the critical lambda the
  // budget is met by mixing inside argmin ties, which is LP-optimal.
  const double tie_tol = 1e-11;

  struct Choice {
    std::size_t lo_arm;  // smallest-usage argmin
    std::size_t hi_arm;  // largest-usage argmin
  };
  const auto choices_at = [&](double lambda) {
    std::vector<Choice> out(b_count);
    for (std::size_t b = 0; b < b_count; ++b) {
      double best = kInf;
      for (std::size_t i = 0; i < k; ++i)
        best = std::min(best, spec.arm_costs[b][i] +
                                  lambda * static_cast<double>(spec.arms[i]));
      std::size_t lo = k, hi = 0;
      for (std::size_t i = 0; i < k; ++i) {
        const double c = spec.arm_costs[b][i] +
                         lambda * static_cast<double>(spec.arms[i]);
        if (c <= best + tie_tol) {
          lo = std::min(lo, i);
          hi = std::max(hi, i);
        }
      }
      out[b] = {lo, hi};
    }
    return out;
  };
  const auto usage_of = [&](const std::vector<Choice>& ch, bool low) {
    double u = 0.0;
    for (std::size_t b = 0; b < b_count; ++b)
      u += spec.bin_shares[b] *
           static_cast<double>(spec.arms[low ? ch[b].lo_arm : ch[b].hi_arm]);
    return u;
  };

  std::vector<double> lambdas{0.0};
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        const double da =
            static_cast<double>(spec.arms[j] - spec.arms[i]);
        if (da == 0.0) continue;
        const double l = (spec.arm_costs[b][i] - spec.arm_costs[b][j]) / da;
        if (l > 0.0 && std::isfinite(l)) lambdas.push_back(l);
      }
  std::sort(lambdas.begin(), lambdas.end());
  lambdas.push_back(lambdas.back() + 1.0);  // beyond the last crossing

  BudgetedArmOptimum result;
  result.policy.assign(b_count, std::vector<double>(k, 0.0));

  for (double lambda : lambdas) {
    const std::vector<Choice> ch = choices_at(lambda);
    const double u_lo = usage_of(ch, true);
    if (u_lo > spec.mean_budget + 1e-12) continue;  // still infeasible
    const double u_hi = usage_of(ch, false);

    // Start from the low-usage argmin assignment and, when lambda > 0 and
    // there is room, mix toward high-usage argmin arms until the budget is
    // tight (complementary slackness).
    for (std::size_t b = 0; b < b_count; ++b)
      result.policy[b][ch[b].lo_arm] = 1.0;
    double usage = u_lo;
    if (lambda > 0.0 && u_hi > u_lo) {
      double needed = std::min(spec.mean_budget, u_hi) - u_lo;
      for (std::size_t b = 0; b < b_count && needed > 1e-15; ++b) {
        const double cap =
            spec.bin_shares[b] *
            static_cast<double>(spec.arms[ch[b].hi_arm] -
                                spec.arms[ch[b].lo_arm]);
        if (cap <= 0.0) continue;
        const double take = std::min(cap, needed);
        const double frac =
            take / (spec.bin_shares[b] *
                    static_cast<double>(spec.arms[ch[b].hi_arm] -
                                        spec.arms[ch[b].lo_arm]));
        result.policy[b][ch[b].lo_arm] -= frac;
        result.policy[b][ch[b].hi_arm] += frac;
        usage += take;
        needed -= take;
      }
    }

    double objective = 0.0;
    for (std::size_t b = 0; b < b_count; ++b)
      for (std::size_t i = 0; i < k; ++i)
        objective += spec.bin_shares[b] * result.policy[b][i] *
                     spec.arm_costs[b][i];
    result.objective = objective;
    result.usage = usage;
    return result;
  }
  throw std::runtime_error("budget below the smallest achievable usage");
}

// ---------------------------------------------------------------------------
// Bounded differences / Efron-Stein
// ---------------------------------------------------------------------------

std::vector<double> normalized_prompt_gradient(std::span<const double> probs,
                                               int correct_answer,
                                               std::span<const int> answers,
                                               double reward_hi, double eps) {
  const std::size_t n = answers.size();
  const std::size_t a_count = probs.size();
  double mean = 0.0;
  for (int a : answers)
    mean += a == correct_answer ? reward_hi : 0.0;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (int a : answers) {
    const double r = a == correct_answer ? reward_hi : 0.0;
    var += (r - mean) * (r - mean);
  }
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);

  std::vector<double> g(a_count, 0.0);
  for (int a : answers) {
    const double r = a == correct_answer ? reward_hi : 0.0;
    const double adv = (r - mean) / (sd + eps);
    for (std::size_t c = 0; c < a_count; ++c)
      g[c] += adv * ((static_cast<int>(c) == a ? 1.0 : 0.0) - probs[c]);
  }
  for (double& v : g) v /= static_cast<double>(n);
  return g;
}

namespace {

double score_bound(std::span<const double> probs) {
  double g = 0.0;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    double s = 0.0;
    for (std::size_t c = 0; c < probs.size(); ++c) {
      const double d = (c == a ? 1.0 : 0.0) - probs[c];
      s += d * d;
    }
    g = std::max(g, std::sqrt(s));
  }
  return g;
}

std::string describe_group(std::span<const int> answers, std::size_t coord,
                           int replacement) {
  std::ostringstream os;
  os << "answers=[";
  for (std::size_t i = 0; i < answers.size(); ++i) {
    if (i) os << ',';
    os << answers[i];
  }
  os << "] coord=" << coord << " replacement=" << replacement;
  return os.str();
}

}  // namespace

BoundedDiffReport bounded_differences_check(const TabularGrpoWorld& world,
                                            PromptUid uid, int n, long trials,
                                            long variance_groups,
                                            std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const std::vector<double> probs = world.policy_probs(uid);
  const int correct = world.prompt(uid).correct_answer;
  const double eps = world.options().advantage_epsilon;
  const double reward = 2.0;  // rewards {-1, +1} mapped to {0, 2}

  BoundedDiffReport report;
  report.reward_range = reward;
  report.score_bound = score_bound(probs);
  report.bd_constant = report.score_bound *
                       (3.0 * reward * reward / (eps * eps) +
                        5.0 * reward / eps);
  report.trials = trials;
  const double per_replacement = report.bd_constant / static_cast<double>(n);

  Rng rng = Rng::stream(seed, 0x62646366ULL, uid, static_cast<std::uint64_t>(n));
  std::vector<int> answers(static_cast<std::size_t>(n));
  std::vector<int> replaced(static_cast<std::size_t>(n));

  for (long t = 0; t < trials; ++t) {
    for (int j = 0; j < n; ++j)
      answers[static_cast<std::size_t>(j)] =
          static_cast<int>(rng.sample_categorical(probs));
    const std::size_t coord = rng.next_index(static_cast<std::size_t>(n));
    replaced = answers;
    replaced[coord] = static_cast<int>(rng.sample_categorical(probs));

    const std::vector<double> g =
        normalized_prompt_gradient(probs, correct, answers, reward, eps);
    const std::vector<double> g2 =
        normalized_prompt_gradient(probs, correct, replaced, reward, eps);
    double diff = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
      diff += (g[c] - g2[c]) * (g[c] - g2[c]);
    diff = std::sqrt(diff);
    report.max_observed_diff = std::max(report.max_observed_diff, diff);
    if (diff > per_replacement * (1.0 + 1e-12)) {
      ++report.violations;
      if (report.offending.empty())
        report.offending = describe_group(answers, coord, replaced[coord]);
    }
  }
  report.diff_ok = report.violations == 0;

  if (variance_groups > 0) {
    const std::size_t a_count = probs.size();
    std::vector<std::vector<double>> grads(
        static_cast<std::size_t>(variance_groups));
    std::vector<double> mean(a_count, 0.0);
    for (long i = 0; i < variance_groups; ++i) {
      for (int j = 0; j < n; ++j)
        answers[static_cast<std::size_t>(j)] =
            static_cast<int>(rng.sample_categorical(probs));
      grads[static_cast<std::size_t>(i)] =
          normalized_prompt_gradient(probs, correct, answers, reward, eps);
      for (std::size_t c = 0; c < a_count; ++c)
        mean[c] += grads[static_cast<std::size_t>(i)][c];
    }
    for (double& v : mean) v /= static_cast<double>(variance_groups);
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& g : grads) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < a_count; ++c)
        d2 += (g[c] - mean[c]) * (g[c] - mean[c]);
      sum += d2;
      sum_sq += d2 * d2;
    }
    const double count = static_cast<double>(variance_groups);
    report.mc_variance = sum / count;
    const double var_of_sq =
        std::max(0.0, sum_sq / count - report.mc_variance * report.mc_variance);
    report.variance_stderr = std::sqrt(var_of_sq / count);
    report.variance_bound =
        report.bd_constant * report.bd_constant / (2.0 * n);
    report.variance_ok =
        report.mc_variance <=
        report.variance_bound + 3.0 * report.variance_stderr;
  } else {
    report.variance_ok = true;
  }
  return report;
}

BoundedDiffReport bounded_differences_check_clipped(
    const TabularGrpoWorld& world, PromptUid uid, int n, long trials,
    std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("n must be >= 1");
  const std::vector<double> pi = world.policy_probs(uid);
  const std::vector<double> mu = world.behavior_probs(uid);
  const int correct = world.prompt(uid).correct_answer;
  const double eps = world.options().advantage_epsilon;
  const double lo = 1.0 - world.options().clip_low;
  const double hi = 1.0 + world.options().clip_high;
  const double reward = 2.0;

  double rho_max = 0.0;
  for (std::size_t a = 0; a < pi.size(); ++a)
    rho_max = std::max(rho_max, pi[a] / mu[a]);
  const double scale = std::max(hi, rho_max);

  BoundedDiffReport report;
  report.reward_range = reward;
  report.score_bound = score_bound(pi);
  report.bd_constant =
      scale * report.score_bound *
      (3.0 * reward * reward / (eps * eps) + 5.0 * reward / eps);
  report.trials = trials;
  const double per_replacement = report.bd_constant / static_cast<double>(n);

  const auto clipped_gradient = [&](std::span<const int> answers) {
    const std::size_t count = pi.size();
    double mean = 0.0;
    for (int a : answers) mean += a == correct ? reward : 0.0;
    mean /= static_cast<double>(answers.size());
    double var = 0.0;
    for (int a : answers) {
      const double r = a == correct ? reward : 0.0;
      var += (r - mean) * (r - mean);
    }
    var /= static_cast<double>(answers.size());
    const double sd = std::sqrt(var);
    std::vector<double> g(count, 0.0);
    for (int a : answers) {
      const double r = a == correct ? reward : 0.0;
      const double adv = (r - mean) / (sd + eps);
      const double rho = pi[static_cast<std::size_t>(a)] /
                         mu[static_cast<std::size_t>(a)];
      const bool active = adv >= 0.0 ? (rho <= hi) : (rho >= lo);
      if (!active) continue;
      for (std::size_t c = 0; c < count; ++c)
        g[c] += adv * rho *
                ((static_cast<int>(c) == a ? 1.0 : 0.0) - pi[c]);
    }
    for (double& v : g) v /= static_cast<double>(answers.size());
    return g;
  };

  Rng rng = Rng::stream(seed, 0x62644350ULL, uid, static_cast<std::uint64_t>(n));
  std::vector<int> answers(static_cast<std::size_t>(n));
  std::vector<int> replaced(static_cast<std::size_t>(n));
  for (long t = 0; t < trials; ++t) {
    for (int j = 0; j < n; ++j)
      answers[static_cast<std::size_t>(j)] =
          static_cast<int>(rng.sample_categorical(mu));
    const std::size_t coord = rng.next_index(static_cast<std::size_t>(n));
    replaced = answers;
    replaced[coord] = static_cast<int>(rng.sample_categorical(mu));
    const std::vector<double> g = clipped_gradient(answers);
    const std::vector<double> g2 = clipped_gradient(replaced);
    double diff = 0.0;
    for (std::size_t c = 0; c < g.size(); ++c)
      diff += (g[c] - g2[c]) * (g[c] - g2[c]);
    diff = std::sqrt(diff);
    report.max_observed_diff = std::max(report.max_observed_diff, diff);
    if (diff > per_replacement * (1.0 + 1e-12)) {
      ++report.violations;
      if (report.offending.empty())
        report.offending = describe_group(answers, coord, replaced[coord]);
    }
  }
  report.diff_ok = report.violations == 0;
  report.variance_ok = true;
  return report;
}

// ---------------------------------------------------------------------------
// Batch variance proxy
// ---------------------------------------------------------------------------

VarianceProxyReport batch_variance_proxy(std::span<const double> variances,
                                         std::span<const double> shares,
                                         std::span<const double> allocation,
                                         int batch_size) {
  if (variances.size() != shares.size() ||
      allocation.size() != shares.size())
    throw std::invalid_argument("per-bin input size mismatch");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  check_distribution(shares, "shares");

  VarianceProxyReport report;
  for (std::size_t b = 0; b < shares.size(); ++b) {
    if (shares[b] <= 0.0) continue;
    if (allocation[b] <= 0.0)
      throw std::invalid_argument("allocation must be > 0 on active bins");
    if (variances[b] < 0.0)
      throw std::invalid_argument("variances must be >= 0");
    report.wse_bound_rhs += shares[b] * variances[b] / allocation[b];
    report.wse += shares[b] * std::sqrt(variances[b] / allocation[b]);
  }
  report.proxy = report.wse_bound_rhs / static_cast<double>(batch_size);
  report.cauchy_schwarz_ok =
      report.wse * report.wse <=
      report.wse_bound_rhs * (1.0 + 1e-12) + 1e-15;
  return report;
}

}  // namespace gdro
