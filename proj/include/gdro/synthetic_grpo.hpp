#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gdro/rng.hpp"

namespace gdro {

using PromptUid = std::uint64_t;

struct SyntheticPrompt {
  PromptUid uid = 0;
  int correct_answer = 0;
  // Controls the initial logit gap of the correct answer; simulation-only.
  double latent_difficulty = 0.0;
};

struct GrpoOptions {
  int answer_count = 8;
  double reward_correct = 1.0;
  double reward_incorrect = -1.0;
  double kl_coefficient = 0.001;
  double clip_low = 0.2;    // clip range [1 - clip_low, 1 + clip_high]
  double clip_high = 0.28;
  double advantage_epsilon = 1e-6;
  double advantage_clip = 5.0;
  double learning_rate = 0.1;
};

// One group of rollouts for a single prompt, with standardized advantages and
// the per-rollout losses evaluated at sampling time.
struct RolloutGroup {
  PromptUid prompt_uid = 0;
  std::vector<int> sampled_answers;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> per_rollout_losses;
  double prompt_loss = 0.0;
};

// Tabular single-token policy over a fixed answer set per prompt. Responses
// have length one, so the per-token importance ratio collapses to a single
// categorical probability ratio and all gradients are exact.
class TabularGrpoWorld {
 public:
  TabularGrpoWorld(std::vector<SyntheticPrompt> prompts, GrpoOptions options);

  const GrpoOptions& options() const { return options_; }
  std::size_t prompt_count() const { return prompts_.size(); }
  const std::vector<SyntheticPrompt>& prompts() const { return prompts_; }
  const SyntheticPrompt& prompt(PromptUid uid) const {
    return prompts_[index_of(uid)];
  }

  // Throws std::out_of_range for unknown uids.
  std::size_t index_of(PromptUid uid) const;

  std::span<const double> policy_logits(PromptUid uid) const;
  std::span<const double> reference_logits(PromptUid uid) const;
  std::span<const double> behavior_logits(PromptUid uid) const;

  std::vector<double> policy_probs(PromptUid uid) const;
  std::vector<double> behavior_probs(PromptUid uid) const;
  std::vector<double> reference_probs(PromptUid uid) const;

  // Samples n answers i.i.d. from the behavior snapshot, assigns rewards by
  // correctness, standardizes within the group ((r - mean) / (std + eps),
  // biased 1/n std) and clamps to +-advantage_clip. Losses are filled in with
  // prompt_loss() at the current policy.
  RolloutGroup sample_rollout_group(PromptUid uid, int n, Rng& rng) const;

  // Negative clipped surrogate plus the closed-form categorical KL penalty,
  // averaged over the group's rollouts.
  double prompt_loss(const RolloutGroup& group) const;
  std::vector<double> per_rollout_losses(const RolloutGroup& group) const;

  // Analytic gradient of the weighted clipped surrogate (advantages scaled by
  // `weight` >= 0) plus the KL penalty, with respect to this prompt's logits.
  // The KL component is not scaled by the weight.
  std::vector<double> prompt_gradient(const RolloutGroup& group,
                                      double weight) const;

  // Steps policy logits by -learning_rate * gradient. Non-finite gradients
  // are rejected before any mutation.
  void apply_update(PromptUid uid, std::span<const double> gradient);
  void apply_updates(
      const std::vector<std::pair<PromptUid, std::vector<double>>>& grads);

  // Re-snapshots the behavior policy from the current policy for every
  // prompt. The runner calls this once per outer training step.
  void refresh_behavior();

  double kl_to_reference(PromptUid uid) const;
  // Exact pass@k under the current policy: 1 - (1 - p_correct)^k.
  double exact_pass_at_k(PromptUid uid, int k) const;

  // Test/oracle hook.
  void set_policy_logits(PromptUid uid, std::span<const double> logits);

  // Line-oriented population format: `uid,correct_answer,latent_difficulty,A`.
  void save_population(std::ostream& out) const;
  static TabularGrpoWorld load_population(std::istream& in,
                                          GrpoOptions options);

 private:
  double kl_from_probs(std::span<const double> p,
                       std::span<const double> ref) const;

  GrpoOptions options_;
  std::vector<SyntheticPrompt> prompts_;
  std::unordered_map<PromptUid, std::size_t> index_;
  // Flat [prompt][answer] logit storage.
  std::vector<double> policy_params_;
  std::vector<double> reference_params_;  // frozen after construction
  std::vector<double> behavior_params_;
};

// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Initial logits for a prompt: correct-answer logit at -latent_difficulty,
// all others at zero.
std::vector<double> initial_logits(const SyntheticPrompt& prompt,
                                   int answer_count);

}  // namespace gdro
