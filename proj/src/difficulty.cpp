#include "gdro/difficulty.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace gdro {

BinPartition BinPartition::uniform(int bins) {
  if (bins < 1) throw std::invalid_argument("bin count must be >= 1");
  BinPartition p;
  p.edges.resize(static_cast<std::size_t>(bins) + 1);
  for (int b = 0; b <= bins; ++b)
    p.edges[static_cast<std::size_t>(b)] =
        static_cast<double>(b) / static_cast<double>(bins);
  p.edges.front() = 0.0;
  p.edges.back() = 1.0;
  return p;
}

BinPartition BinPartition::from_interior_edges(
    std::span<const double> interior) {
  BinPartition p;
  p.edges.reserve(interior.size() + 2);
  p.edges.push_back(0.0);
  p.edges.insert(p.edges.end(), interior.begin(), interior.end());
  p.edges.push_back(1.0);
  p.validate();
  return p;
}

void BinPartition::validate() const {
  if (edges.size() < 2) throw std::invalid_argument("partition needs >= 1 bin");
  if (edges.front() != 0.0 || edges.back() != 1.0)
    throw std::invalid_argument("partition edges must span [0, 1]");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i - 1] < edges[i]))
      throw std::invalid_argument("partition edges must strictly increase");
}

int BinPartition::locate(double estimate) const {
  if (estimate < 0.0 || estimate > 1.0)
    throw std::invalid_argument("estimate out of [0, 1]");
  const int b = bin_count();
  for (int i = 0; i < b - 1; ++i) {
    if (estimate < edges[static_cast<std::size_t>(i) + 1]) return i;
  }
  return b - 1;  // top bin closed at 1
}

DifficultyTracker::DifficultyTracker(int window_length, int pass_k,
                                     double hysteresis_margin)
    : window_length_(window_length),
      pass_k_(pass_k),
      hysteresis_margin_(hysteresis_margin) {
  if (window_length < 1)
    throw std::invalid_argument("window_length must be >= 1");
  if (pass_k < 1) throw std::invalid_argument("pass_k must be >= 1");
  if (hysteresis_margin < 0.0)
    throw std::invalid_argument("hysteresis_margin must be >= 0");
}

void DifficultyTracker::record_outcome(PromptUid uid,
                                       const std::vector<bool>& flags) {
  if (flags.empty()) throw std::invalid_argument("empty outcome flags");
  const unsigned char indicator =
      std::any_of(flags.begin(), flags.end(), [](bool f) { return f; }) ? 1
                                                                        : 0;
  Entry& e = state_[uid];
  if (e.ring.empty())
    e.ring.assign(static_cast<std::size_t>(window_length_), 0);
  if (e.size < window_length_) {
    e.ring[static_cast<std::size_t>((e.head + e.size) % window_length_)] =
        indicator;
    e.sum += indicator;
    ++e.size;
  } else {
    e.sum -= e.ring[static_cast<std::size_t>(e.head)];
    e.ring[static_cast<std::size_t>(e.head)] = indicator;
    e.sum += indicator;
    e.head = (e.head + 1) % window_length_;
  }
}

const DifficultyTracker::Entry& DifficultyTracker::entry(PromptUid uid) const {
  auto it = state_.find(uid);
  if (it == state_.end() || it->second.size == 0)
    throw std::out_of_range("no recorded outcomes for uid " +
                            std::to_string(uid));
  return it->second;
}

int DifficultyTracker::history_size(PromptUid uid) const {
  auto it = state_.find(uid);
  return it == state_.end() ? 0 : it->second.size;
}

double DifficultyTracker::pass_estimate(PromptUid uid) const {
  const Entry& e = entry(uid);
  return static_cast<double>(e.sum) / static_cast<double>(e.size);
}

int DifficultyTracker::assign_bin(const BinPartition& partition,
                                  PromptUid uid) {
  const double estimate = pass_estimate(uid);
  Entry& e = state_.at(uid);
  if (e.bin >= partition.bin_count()) e.bin = -1;  // partition changed
  if (e.bin < 0) {
    e.bin = partition.locate(estimate);
    return e.bin;
  }
  const double lo =
      partition.edges[static_cast<std::size_t>(e.bin)] - hysteresis_margin_;
  const double hi = partition.edges[static_cast<std::size_t>(e.bin) + 1] +
                    hysteresis_margin_;
  const bool top = e.bin == partition.bin_count() - 1;
  const bool inside = estimate >= lo && (top ? estimate <= hi : estimate < hi);
  if (!inside) e.bin = partition.locate(estimate);
  return e.bin;
}

std::optional<int> DifficultyTracker::current_bin(PromptUid uid) const {
  auto it = state_.find(uid);
  if (it == state_.end() || it->second.bin < 0) return std::nullopt;
  return it->second.bin;
}

std::vector<double> DifficultyTracker::batch_bin_shares(
    const BinPartition& partition, std::span<const PromptUid> uids) const {
  if (uids.empty()) throw std::invalid_argument("empty batch");
  std::vector<double> shares(static_cast<std::size_t>(partition.bin_count()),
                             0.0);
  for (PromptUid uid : uids) {
    const std::optional<int> bin = current_bin(uid);
    if (!bin) throw std::invalid_argument("uid without bin in batch");
    shares[static_cast<std::size_t>(*bin)] += 1.0;
  }
  for (double& s : shares) s /= static_cast<double>(uids.size());
  return shares;
}

void DifficultyTracker::dump_csv(std::ostream& out) const {
  out << "uid,bin,estimate,history_len\n";
  std::vector<PromptUid> uids;
  uids.reserve(state_.size());
  for (const auto& [uid, e] : state_)
    if (e.size > 0) uids.push_back(uid);
  std::sort(uids.begin(), uids.end());
  for (PromptUid uid : uids) {
    const Entry& e = state_.at(uid);
    char buf[32];
    const int len = std::snprintf(
        buf, sizeof buf, "%.17g",
        static_cast<double>(e.sum) / static_cast<double>(e.size));
    out << uid << ',' << e.bin << ',';
    out.write(buf, len);
    out << ',' << e.size << '\n';
  }
}

}  // namespace gdro
