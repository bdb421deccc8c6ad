#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gdro/diagnostics.hpp"
#include "gdro/difficulty.hpp"
#include "gdro/prompt_adversary.hpp"
#include "gdro/rollout_budgeter.hpp"
#include "gdro/synthetic_grpo.hpp"

namespace gdro {

enum class RunMode { baseline_grpo, prompt_gdro, rollout_gdro };

const char* to_string(RunMode mode);
RunMode parse_run_mode(const std::string& name);

// Flat configuration for one closed-loop run. Every field has the documented
// default and is overridable from a `key = value` config file.
struct RunConfig {
  // loop
  int population_size = 2000;
  int batch_size = 256;
  int steps = 600;
  RunMode mode = RunMode::baseline_grpo;
  std::uint64_t seed = 0;
  // synthetic world
  int answer_count = 8;
  double reward_correct = 1.0;
  double reward_incorrect = -1.0;
  double kl_coefficient = 0.001;
  double clip_low = 0.2;
  double clip_high = 0.28;
  double advantage_epsilon = 1e-6;
  double advantage_clip = 5.0;
  double learning_rate = 0.05;
  // Initial difficulty spectrum: a heavy-tailed two-band mixture. A
  // `dead_fraction` share of prompts starts in the hard core with exact
  // pass@k uniform in [min_initial_passk, dead_max_passk]; the rest covers
  // [live_min_passk, max_initial_passk] with density skewed toward the hard
  // end by `difficulty_tail`.
  double dead_fraction = 0.35;
  double min_initial_passk = 0.01;
  double dead_max_passk = 0.03;
  double live_min_passk = 0.08;
  double max_initial_passk = 0.98;
  double difficulty_tail = 1.6;
  // binning
  int bins = 10;
  int window_length = 8;   // H; artifact default, see docs
  double hysteresis_margin = 0.02;
  int pass_k = 8;
  // prompt adversary
  double score_ema_decay = 0.12;
  double adversary_learning_rate = 0.65;
  double score_clip = 10.0;
  double exploration = 0.01;
  double weight_cap = 15.0;
  double share_floor = 0.01;
  bool normalize_by_share = true;
  // rollout budgeter
  int arm_min = 2;
  int arm_max = 12;
  double mean_budget = 4.0;
  double dual_rate = 0.05;
  double dual_cap = 10.0;
  double arm_ema_decay = 0.4;
  double arm_learning_rate = 0.65;
  double arm_exploration = 0.01;
  bool count_weighted_objective = true;
  // fixed training rollouts for baseline/prompt modes
  int rollouts_per_prompt = 4;

  void validate() const;  // throws std::invalid_argument before any state
  void set_key(const std::string& key, const std::string& value);
  static RunConfig from_stream(std::istream& in);
  static RunConfig from_file(const std::string& path);
};

// One step of logged state; everything the diagnostics need is recomputable
// from these fields alone.
struct StepRecord {
  long step = 0;
  std::vector<double> shares;       // realized batch bin shares q-hat
  std::vector<double> weight_dist;  // normalized weight-only distribution
  std::vector<double> scores;       // adversary scores
  std::vector<double> multipliers;  // capped advantage multipliers
  std::vector<double> adversary_q;  // exploration-mixed adversary distribution
  std::vector<int> allocation;      // rollouts per prompt, per bin
  std::vector<double> arm_prob_chosen;
  double mu = 0.0;
  double realized_mean = 0.0;
  bool feasible = true;
  std::vector<long> loss_count;     // prompt-level loss signal stats per bin
  std::vector<double> loss_sum;
  std::vector<double> loss_sumsq;
  // Population mean exact pass@k per evaluation group. Evaluation groups
  // are frozen at step 0 from the exact initial pass@k (the tabular world
  // has no cross-prompt generalization, so a fixed partition is what makes
  // worst-group progress measurable).
  std::vector<double> bin_passk;
  std::vector<long> bin_population;
  double worst_bin_passk = 0.0;
  StepDiagnostics diag;
};

struct RunTrace {
  RunConfig config;
  std::vector<StepRecord> records;
  std::vector<double> sigma_hat;        // per-bin, pooled over the run
  std::vector<int> sigma_hat_missing;   // bins that never saw loss data

  double final_worst_bin_passk() const;
};

// Deterministic closed loop: given the same config (seed included) the trace
// and every serialized artifact are byte-identical.
RunTrace run(const RunConfig& config);

void write_trace_jsonl(const RunTrace& trace, std::ostream& out);
RunTrace read_trace_jsonl(std::istream& in);  // parse errors carry line numbers

// Pooled sigma-hat plus per-step diagnostics, recomputed from record state
// only. The live run uses the same function, so replay matches exactly.
std::vector<StepDiagnostics> recompute_diagnostics(
    const RunConfig& config, const std::vector<StepRecord>& records,
    std::vector<double>* sigma_hat_out = nullptr,
    std::vector<int>* missing_out = nullptr);

void write_diagnostics_csv(const RunTrace& trace, std::ostream& out);
void write_summary_json(const RunTrace& trace, std::ostream& out);

struct RunComparison {
  double worst_bin_passk_a = 0.0;
  double worst_bin_passk_b = 0.0;
  double worst_bin_passk_delta = 0.0;  // b - a
  double mean_wse_a = 0.0;
  double mean_wse_b = 0.0;
  double wse_reduction = 0.0;  // (a - b) / a, relative reduction of b vs a
  double final_mass_ge3_delta = 0.0;
  double final_mass_ge8_delta = 0.0;
  double mean_delta_mu_a = 0.0;
  double mean_delta_mu_b = 0.0;
};

// Structural mismatch (different bin counts) throws std::invalid_argument.
RunComparison compare_runs(const RunTrace& a, const RunTrace& b);
void write_comparison_json(const RunComparison& cmp, std::ostream& out);

}  // namespace gdro
