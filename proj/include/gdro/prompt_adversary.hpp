#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gdro {

struct PromptAdversaryOptions {
  double ema_decay = 0.12;        // beta
  double learning_rate = 0.65;    // eta_q
  double score_clip = 10.0;       // C
  double exploration = 0.01;      // gamma
  double weight_cap = 15.0;       // omega_max
  double share_floor = 0.01;
  bool normalize_by_share = true;
};

// Exponentiated-score reweighting adversary over difficulty bins. Scores are
// EMA-smoothed mean bin losses (optionally divided by the realized bin share
// to remove frequency bias), weights are their clipped exponentials, and the
// sampled distribution mixes in a uniform exploration floor.
class PromptAdversary {
 public:
  PromptAdversary(int bins, PromptAdversaryOptions options = {});

  int bins() const { return static_cast<int>(scores_.size()); }
  const PromptAdversaryOptions& options() const { return options_; }
  std::span<const double> scores() const { return scores_; }

  // S(b) <- (1 - beta) S(b) + beta * signal(b) for bins with data, where the
  // signal is the mean loss divided by max(share, share_floor) when share
  // normalization is on. Bins without data keep their score. A non-finite
  // loss rejects that bin's update and logs the event.
  void update_scores(const std::vector<std::optional<double>>& bin_mean_losses,
                     std::span<const double> bin_shares);

  // omega(b) = exp(eta_q * clip(S(b), -C, C)).
  std::vector<double> raw_weights() const;
  // Weight-only distribution omega / sum omega, before exploration mixing.
  std::vector<double> weight_distribution() const;
  // q(b) = (1 - gamma) * omega(b) / sum omega + gamma / B.
  std::vector<double> bin_distribution() const;
  // min(omega(bin), omega_max); the omitted normalizer is absorbed into the
  // effective step size.
  double advantage_multiplier(int bin) const;

  const std::vector<std::string>& events() const { return events_; }

  static const char* csv_header();  // step,bin,score,weight,q,share,mean_loss
  void append_csv(std::ostream& out, long step,
                  std::span<const double> bin_shares,
                  const std::vector<std::optional<double>>& bin_mean_losses)
      const;

 private:
  PromptAdversaryOptions options_;
  std::vector<double> scores_;
  std::vector<std::string> events_;
};

}  // namespace gdro
