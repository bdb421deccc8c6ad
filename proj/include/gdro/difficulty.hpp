#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "gdro/synthetic_grpo.hpp"

namespace gdro {

// Accuracy bin edges 0 = a_0 < a_1 < ... < a_B = 1. Bin b covers
// [a_b, a_{b+1}) with the top bin closed at 1 so an estimate of exactly 1.0
// is always binnable.
struct BinPartition {
  std::vector<double> edges;

  static BinPartition uniform(int bins);
  static BinPartition from_interior_edges(std::span<const double> interior);

  int bin_count() const { return static_cast<int>(edges.size()) - 1; }
  // Candidate bin for an estimate in [0, 1], ignoring hysteresis.
  int locate(double estimate) const;
  void validate() const;  // throws std::invalid_argument
};

// Online pass@k tracker: per-uid sliding window of any-of-k correctness
// indicators plus the current (hysteretic) bin assignment.
class DifficultyTracker {
 public:
  DifficultyTracker(int window_length, int pass_k, double hysteresis_margin);

  int window_length() const { return window_length_; }
  int pass_k() const { return pass_k_; }
  double hysteresis_margin() const { return hysteresis_margin_; }

  // Appends 1 iff any flag is true; evicts the oldest entry beyond the
  // window. Flags must be nonempty.
  void record_outcome(PromptUid uid, const std::vector<bool>& rollout_correct);

  bool seen(PromptUid uid) const { return state_.count(uid) > 0; }
  int history_size(PromptUid uid) const;
  // Mean of stored indicators over available history. Throws for unseen uids.
  double pass_estimate(PromptUid uid) const;

  // Assigns (or keeps) the uid's bin: reassignment happens only when the
  // estimate leaves the current bin's interval widened by the hysteresis
  // margin on each side.
  int assign_bin(const BinPartition& partition, PromptUid uid);
  std::optional<int> current_bin(PromptUid uid) const;

  // Normalized bin counts over a batch of already-assigned uids.
  std::vector<double> batch_bin_shares(const BinPartition& partition,
                                       std::span<const PromptUid> uids) const;

  // `uid,bin,estimate,history_len`, sorted by uid.
  void dump_csv(std::ostream& out) const;

 private:
  struct Entry {
    std::vector<unsigned char> ring;
    int head = 0;
    int size = 0;
    int sum = 0;
    int bin = -1;
  };

  const Entry& entry(PromptUid uid) const;

  int window_length_;
  int pass_k_;
  double hysteresis_margin_;
  std::unordered_map<PromptUid, Entry> state_;
};

}  // namespace gdro
