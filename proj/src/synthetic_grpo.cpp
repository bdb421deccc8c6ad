#include "gdro/synthetic_grpo.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gdro {

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  double m = -HUGE_VAL;
  for (double v : logits) m = std::max(m, v);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    z += out[i];
  }
  for (double& v : out) v /= z;
  return out;
}

std::vector<double> initial_logits(const SyntheticPrompt& prompt,
                                   int answer_count) {
  std::vector<double> logits(static_cast<std::size_t>(answer_count), 0.0);
  logits[static_cast<std::size_t>(prompt.correct_answer)] =
      -prompt.latent_difficulty;
  return logits;
}

TabularGrpoWorld::TabularGrpoWorld(std::vector<SyntheticPrompt> prompts,
                                   GrpoOptions options)
    : options_(options), prompts_(std::move(prompts)) {
  if (options_.answer_count < 2)
    throw std::invalid_argument("answer_count must be >= 2");
  if (options_.clip_low <= 0.0 || options_.clip_high <= 0.0)
    throw std::invalid_argument("clip range parameters must be > 0");
  if (options_.advantage_epsilon <= 0.0)
    throw std::invalid_argument("advantage_epsilon must be > 0");
  if (options_.advantage_clip <= 0.0)
    throw std::invalid_argument("advantage_clip must be > 0");
  if (options_.kl_coefficient < 0.0)
    throw std::invalid_argument("kl_coefficient must be >= 0");

  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  policy_params_.resize(prompts_.size() * a);
  index_.reserve(prompts_.size());
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    const SyntheticPrompt& p = prompts_[i];
    if (p.correct_answer < 0 || p.correct_answer >= options_.answer_count)
      throw std::invalid_argument("correct_answer out of range");
    if (!std::isfinite(p.latent_difficulty))
      throw std::invalid_argument("latent_difficulty must be finite");
    if (!index_.emplace(p.uid, i).second)
      throw std::invalid_argument("duplicate prompt uid");
    const std::vector<double> logits = initial_logits(p, options_.answer_count);
    std::copy(logits.begin(), logits.end(), policy_params_.begin() + i * a);
  }
  reference_params_ = policy_params_;
  behavior_params_ = policy_params_;
}

std::size_t TabularGrpoWorld::index_of(PromptUid uid) const {
  auto it = index_.find(uid);
  if (it == index_.end())
    throw std::out_of_range("unknown prompt uid " + std::to_string(uid));
  return it->second;
}

std::span<const double> TabularGrpoWorld::policy_logits(PromptUid uid) const {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  return {policy_params_.data() + index_of(uid) * a, a};
}

std::span<const double> TabularGrpoWorld::reference_logits(
    PromptUid uid) const {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  return {reference_params_.data() + index_of(uid) * a, a};
}

std::span<const double> TabularGrpoWorld::behavior_logits(PromptUid uid) const {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  return {behavior_params_.data() + index_of(uid) * a, a};
}

std::vector<double> TabularGrpoWorld::policy_probs(PromptUid uid) const {
  return softmax(policy_logits(uid));
}

std::vector<double> TabularGrpoWorld::behavior_probs(PromptUid uid) const {
  return softmax(behavior_logits(uid));
}

std::vector<double> TabularGrpoWorld::reference_probs(PromptUid uid) const {
  return softmax(reference_logits(uid));
}

RolloutGroup TabularGrpoWorld::sample_rollout_group(PromptUid uid, int n,
                                                    Rng& rng) const {
  if (n < 1) throw std::invalid_argument("rollout group size must be >= 1");
  const SyntheticPrompt& prompt = prompts_[index_of(uid)];
  const std::vector<double> probs = behavior_probs(uid);

  RolloutGroup group;
  group.prompt_uid = uid;
  group.sampled_answers.resize(static_cast<std::size_t>(n));
  group.rewards.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const int answer = static_cast<int>(rng.sample_categorical(probs));
    group.sampled_answers[static_cast<std::size_t>(j)] = answer;
    group.rewards[static_cast<std::size_t>(j)] =
        answer == prompt.correct_answer ? options_.reward_correct
                                        : options_.reward_incorrect;
  }

  double mean = 0.0;
  for (double r : group.rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : group.rewards) var += (r - mean) * (r - mean);
  var /= n;  // biased 1/n standard deviation
  const double sd = std::sqrt(var);

  group.advantages.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    double a = (group.rewards[static_cast<std::size_t>(j)] - mean) /
               (sd + options_.advantage_epsilon);
    a = std::clamp(a, -options_.advantage_clip, options_.advantage_clip);
    group.advantages[static_cast<std::size_t>(j)] = a;
  }

  group.per_rollout_losses = per_rollout_losses(group);
  double total = 0.0;
  for (double l : group.per_rollout_losses) total += l;
  group.prompt_loss = total / static_cast<double>(n);
  return group;
}

double TabularGrpoWorld::kl_from_probs(std::span<const double> p,
                                       std::span<const double> ref) const {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(ref[i]));
  }
  return std::max(kl, 0.0);
}

double TabularGrpoWorld::kl_to_reference(PromptUid uid) const {
  const std::vector<double> p = policy_probs(uid);
  const std::vector<double> ref = reference_probs(uid);
  return kl_from_probs(p, ref);
}

double TabularGrpoWorld::exact_pass_at_k(PromptUid uid, int k) const {
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  const SyntheticPrompt& prompt = prompts_[index_of(uid)];
  const std::vector<double> p = policy_probs(uid);
  const double pc = p[static_cast<std::size_t>(prompt.correct_answer)];
  return 1.0 - std::pow(1.0 - pc, k);
}

std::vector<double> TabularGrpoWorld::per_rollout_losses(
    const RolloutGroup& group) const {
  const std::vector<double> pi = policy_probs(group.prompt_uid);
  const std::vector<double> mu = behavior_probs(group.prompt_uid);
  const std::vector<double> ref = reference_probs(group.prompt_uid);
  const double kl_term = options_.kl_coefficient * kl_from_probs(pi, ref);
  const double lo = 1.0 - options_.clip_low;
  const double hi = 1.0 + options_.clip_high;

  std::vector<double> losses(group.sampled_answers.size());
  for (std::size_t j = 0; j < group.sampled_answers.size(); ++j) {
    const std::size_t a = static_cast<std::size_t>(group.sampled_answers[j]);
    const double rho = pi[a] / mu[a];
    if (!std::isfinite(rho))
      throw std::runtime_error("non-finite importance ratio");
    const double adv = group.advantages[j];
    const double surrogate =
        std::min(rho * adv, std::clamp(rho, lo, hi) * adv);
    losses[j] = -surrogate + kl_term;
  }
  return losses;
}

double TabularGrpoWorld::prompt_loss(const RolloutGroup& group) const {
  // Evaluated at the current policy; the group's stored losses are whatever
  // they were at sampling time.
  const std::vector<double> losses = per_rollout_losses(group);
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(losses.size());
}

std::vector<double> TabularGrpoWorld::prompt_gradient(const RolloutGroup& group,
                                                      double weight) const {
  if (weight < 0.0) throw std::invalid_argument("weight must be >= 0");
  const std::size_t a_count = static_cast<std::size_t>(options_.answer_count);
  const std::vector<double> pi = policy_probs(group.prompt_uid);
  const std::vector<double> mu = behavior_probs(group.prompt_uid);
  const std::vector<double> ref = reference_probs(group.prompt_uid);
  const double lo = 1.0 - options_.clip_low;
  const double hi = 1.0 + options_.clip_high;
  const double n = static_cast<double>(group.sampled_answers.size());

  std::vector<double> grad(a_count, 0.0);

  // Surrogate part. d rho / d theta_c = rho * (1{c = a_j} - pi_c); the min is
  // inactive (gradient 0) once the ratio is past its clip boundary on the
  // losing side.
  for (std::size_t j = 0; j < group.sampled_answers.size(); ++j) {
    const std::size_t aj = static_cast<std::size_t>(group.sampled_answers[j]);
    const double adv = weight * group.advantages[j];
    if (adv == 0.0) continue;
    const double rho = pi[aj] / mu[aj];
    const bool active = adv > 0.0 ? (rho <= hi) : (rho >= lo);
    if (!active) continue;
    const double coef = -adv * rho / n;
    for (std::size_t c = 0; c < a_count; ++c) {
      grad[c] += coef * ((c == aj ? 1.0 : 0.0) - pi[c]);
    }
  }

  // KL part: d KL / d theta_c = pi_c (log(pi_c / ref_c) - KL). Unweighted.
  if (options_.kl_coefficient > 0.0) {
    const double kl = kl_from_probs(pi, ref);
    for (std::size_t c = 0; c < a_count; ++c) {
      grad[c] += options_.kl_coefficient * pi[c] *
                 (std::log(pi[c]) - std::log(ref[c]) - kl);
    }
  }
  return grad;
}

void TabularGrpoWorld::apply_update(PromptUid uid,
                                    std::span<const double> gradient) {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  if (gradient.size() != a)
    throw std::invalid_argument("gradient dimension mismatch");
  for (double g : gradient)
    if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
  double* theta = policy_params_.data() + index_of(uid) * a;
  for (std::size_t c = 0; c < a; ++c)
    theta[c] -= options_.learning_rate * gradient[c];
}

void TabularGrpoWorld::apply_updates(
    const std::vector<std::pair<PromptUid, std::vector<double>>>& grads) {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  for (const auto& [uid, g] : grads) {
    index_of(uid);
    if (g.size() != a)
      throw std::invalid_argument("gradient dimension mismatch");
    for (double v : g)
      if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient");
  }
  for (const auto& [uid, g] : grads) {
    double* theta = policy_params_.data() + index_of(uid) * a;
    for (std::size_t c = 0; c < a; ++c)
      theta[c] -= options_.learning_rate * g[c];
  }
}

void TabularGrpoWorld::refresh_behavior() { behavior_params_ = policy_params_; }

void TabularGrpoWorld::set_policy_logits(PromptUid uid,
                                         std::span<const double> logits) {
  const std::size_t a = static_cast<std::size_t>(options_.answer_count);
  if (logits.size() != a)
    throw std::invalid_argument("logit dimension mismatch");
  std::copy(logits.begin(), logits.end(),
            policy_params_.begin() + index_of(uid) * a);
}

void TabularGrpoWorld::save_population(std::ostream& out) const {
  for (const SyntheticPrompt& p : prompts_) {
    out << p.uid << ',' << p.correct_answer << ',';
    char buf[32];
    const int len =
        std::snprintf(buf, sizeof buf, "%.17g", p.latent_difficulty);
    out.write(buf, len);
    out << ',' << options_.answer_count << '\n';
  }
}

TabularGrpoWorld TabularGrpoWorld::load_population(std::istream& in,
                                                   GrpoOptions options) {
  std::vector<SyntheticPrompt> prompts;
  std::string line;
  int line_no = 0;
  int answer_count = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    SyntheticPrompt p;
    char c1 = 0, c2 = 0, c3 = 0;
    int a = 0;
    if (!(ls >> p.uid >> c1 >> p.correct_answer >> c2 >> p.latent_difficulty >>
          c3 >> a) ||
        c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::runtime_error("population parse error at line " +
                               std::to_string(line_no));
    }
    if (answer_count == -1) answer_count = a;
    if (a != answer_count)
      throw std::runtime_error("inconsistent answer count at line " +
                               std::to_string(line_no));
    prompts.push_back(p);
  }
  if (answer_count > 0) options.answer_count = answer_count;
  return TabularGrpoWorld(std::move(prompts), options);
}

}  // namespace gdro
