#include "gdro/prompt_adversary.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace gdro {

PromptAdversary::PromptAdversary(int bins, PromptAdversaryOptions options)
    : options_(options), scores_(static_cast<std::size_t>(bins), 0.0) {
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  if (options_.ema_decay < 0.0 || options_.ema_decay > 1.0)
    throw std::invalid_argument("ema_decay must be in [0, 1]");
  if (options_.learning_rate < 0.0)
    throw std::invalid_argument("learning_rate must be >= 0");
  if (options_.score_clip <= 0.0)
    throw std::invalid_argument("score_clip must be > 0");
  if (options_.exploration < 0.0 || options_.exploration > 1.0)
    throw std::invalid_argument("exploration must be in [0, 1]");
  if (options_.weight_cap <= 0.0)
    throw std::invalid_argument("weight_cap must be > 0");
  if (options_.share_floor <= 0.0)
    throw std::invalid_argument("share_floor must be > 0");
}

void PromptAdversary::update_scores(
    const std::vector<std::optional<double>>& bin_mean_losses,
    std::span<const double> bin_shares) {
  if (bin_mean_losses.size() != scores_.size() ||
      bin_shares.size() != scores_.size())
    throw std::invalid_argument("per-bin input size mismatch");
  for (std::size_t b = 0; b < scores_.size(); ++b) {
    if (!bin_mean_losses[b]) continue;  // empty bin: score frozen
    const double loss = *bin_mean_losses[b];
    if (!std::isfinite(loss)) {
      events_.push_back("rejected non-finite loss for bin " +
                        std::to_string(b));
      continue;
    }
    double signal = loss;
    if (options_.normalize_by_share)
      signal /= std::max(bin_shares[b], options_.share_floor);
    double s = (1.0 - options_.ema_decay) * scores_[b] +
               options_.ema_decay * signal;
    scores_[b] = std::clamp(s, -options_.score_clip, options_.score_clip);
  }
}

std::vector<double> PromptAdversary::raw_weights() const {
  std::vector<double> w(scores_.size());
  for (std::size_t b = 0; b < scores_.size(); ++b) {
    const double s =
        std::clamp(scores_[b], -options_.score_clip, options_.score_clip);
    w[b] = std::exp(options_.learning_rate * s);
  }
  return w;
}

std::vector<double> PromptAdversary::weight_distribution() const {
  std::vector<double> w = raw_weights();
  double z = 0.0;
  for (double v : w) z += v;
  for (double& v : w) v /= z;
  return w;
}

std::vector<double> PromptAdversary::bin_distribution() const {
  std::vector<double> q = weight_distribution();
  const double gamma = options_.exploration;
  const double u = 1.0 / static_cast<double>(q.size());
  for (double& v : q) v = (1.0 - gamma) * v + gamma * u;
  return q;
}

double PromptAdversary::advantage_multiplier(int bin) const {
  if (bin < 0 || bin >= bins()) throw std::out_of_range("bin out of range");
  const double s = std::clamp(scores_[static_cast<std::size_t>(bin)],
                              -options_.score_clip, options_.score_clip);
  return std::min(std::exp(options_.learning_rate * s), options_.weight_cap);
}

const char* PromptAdversary::csv_header() {
  return "step,bin,score,weight,q,share,mean_loss";
}

namespace {
void put_double(std::ostream& out, double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.write(buf, len);
}
}  // namespace

void PromptAdversary::append_csv(
    std::ostream& out, long step, std::span<const double> bin_shares,
    const std::vector<std::optional<double>>& bin_mean_losses) const {
  const std::vector<double> w = raw_weights();
  const std::vector<double> q = bin_distribution();
  for (std::size_t b = 0; b < scores_.size(); ++b) {
    out << step << ',' << b << ',';
    put_double(out, scores_[b]);
    out << ',';
    put_double(out, w[b]);
    out << ',';
    put_double(out, q[b]);
    out << ',';
    put_double(out, b < bin_shares.size() ? bin_shares[b] : 0.0);
    out << ',';
    if (b < bin_mean_losses.size() && bin_mean_losses[b])
      put_double(out, *bin_mean_losses[b]);
    else
      out << "nan";
    out << '\n';
  }
}

}  // namespace gdro
