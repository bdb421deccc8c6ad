#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "gdro/runner.hpp"
#include "json.hpp"

namespace gdro {

namespace {

using nlohmann::json;

json config_to_json(const RunConfig& c) {
  json j;
  j["population_size"] = c.population_size;
  j["batch_size"] = c.batch_size;
  j["steps"] = c.steps;
  j["mode"] = to_string(c.mode);
  j["seed"] = c.seed;
  j["answer_count"] = c.answer_count;
  j["reward_correct"] = c.reward_correct;
  j["reward_incorrect"] = c.reward_incorrect;
  j["kl_coefficient"] = c.kl_coefficient;
  j["clip_low"] = c.clip_low;
  j["clip_high"] = c.clip_high;
  j["advantage_epsilon"] = c.advantage_epsilon;
  j["advantage_clip"] = c.advantage_clip;
  j["learning_rate"] = c.learning_rate;
  j["difficulty_tail"] = c.difficulty_tail;
  j["min_initial_passk"] = c.min_initial_passk;
  j["max_initial_passk"] = c.max_initial_passk;
  j["bins"] = c.bins;
  j["window_length"] = c.window_length;
  j["hysteresis_margin"] = c.hysteresis_margin;
  j["pass_k"] = c.pass_k;
  j["score_ema_decay"] = c.score_ema_decay;
  j["adversary_learning_rate"] = c.adversary_learning_rate;
  j["score_clip"] = c.score_clip;
  j["exploration"] = c.exploration;
  j["weight_cap"] = c.weight_cap;
  j["share_floor"] = c.share_floor;
  j["normalize_by_share"] = c.normalize_by_share;
  j["arm_min"] = c.arm_min;
  j["arm_max"] = c.arm_max;
  j["mean_budget"] = c.mean_budget;
  j["dual_rate"] = c.dual_rate;
  j["dual_cap"] = c.dual_cap;
  j["arm_ema_decay"] = c.arm_ema_decay;
  j["arm_learning_rate"] = c.arm_learning_rate;
  j["arm_exploration"] = c.arm_exploration;
  j["count_weighted_objective"] = c.count_weighted_objective;
  j["rollouts_per_prompt"] = c.rollouts_per_prompt;
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.population_size = j.at("population_size").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.steps = j.at("steps").get<int>();
  c.mode = parse_run_mode(j.at("mode").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.answer_count = j.at("answer_count").get<int>();
  c.reward_correct = j.at("reward_correct").get<double>();
  c.reward_incorrect = j.at("reward_incorrect").get<double>();
  c.kl_coefficient = j.at("kl_coefficient").get<double>();
  c.clip_low = j.at("clip_low").get<double>();
  c.clip_high = j.at("clip_high").get<double>();
  c.advantage_epsilon = j.at("advantage_epsilon").get<double>();
  c.advantage_clip = j.at("advantage_clip").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.difficulty_tail = j.at("difficulty_tail").get<double>();
  c.min_initial_passk = j.at("min_initial_passk").get<double>();
  c.max_initial_passk = j.at("max_initial_passk").get<double>();
  c.bins = j.at("bins").get<int>();
  c.window_length = j.at("window_length").get<int>();
  c.hysteresis_margin = j.at("hysteresis_margin").get<double>();
  c.pass_k = j.at("pass_k").get<int>();
  c.score_ema_decay = j.at("score_ema_decay").get<double>();
  c.adversary_learning_rate = j.at("adversary_learning_rate").get<double>();
  c.score_clip = j.at("score_clip").get<double>();
  c.exploration = j.at("exploration").get<double>();
  c.weight_cap = j.at("weight_cap").get<double>();
  c.share_floor = j.at("share_floor").get<double>();
  c.normalize_by_share = j.at("normalize_by_share").get<bool>();
  c.arm_min = j.at("arm_min").get<int>();
  c.arm_max = j.at("arm_max").get<int>();
  c.mean_budget = j.at("mean_budget").get<double>();
  c.dual_rate = j.at("dual_rate").get<double>();
  c.dual_cap = j.at("dual_cap").get<double>();
  c.arm_ema_decay = j.at("arm_ema_decay").get<double>();
  c.arm_learning_rate = j.at("arm_learning_rate").get<double>();
  c.arm_exploration = j.at("arm_exploration").get<double>();
  c.count_weighted_objective = j.at("count_weighted_objective").get<bool>();
  c.rollouts_per_prompt = j.at("rollouts_per_prompt").get<int>();
  return c;
}

json diag_to_json(const StepDiagnostics& d) {
  json j;
  j["mu_data"] = d.mu_data;
  j["mu_weight"] = d.mu_weight;
  j["delta_mu"] = d.delta_mu;
  j["wse"] = d.wse;
  j["wse_uniform"] = d.wse_uniform;
  j["entropy_q"] = d.entropy_q;
  j["entropy_w"] = d.entropy_w;
  j["mass_ge3"] = d.mass_ge3;
  j["mass_ge8"] = d.mass_ge8;
  return j;
}

StepDiagnostics diag_from_json(long step, const json& j) {
  StepDiagnostics d;
  d.step = step;
  d.mu_data = j.at("mu_data").get<double>();
  d.mu_weight = j.at("mu_weight").get<double>();
  d.delta_mu = j.at("delta_mu").get<double>();
  d.wse = j.at("wse").get<double>();
  d.wse_uniform = j.at("wse_uniform").get<double>();
  d.entropy_q = j.at("entropy_q").get<double>();
  d.entropy_w = j.at("entropy_w").get<double>();
  d.mass_ge3 = j.at("mass_ge3").get<double>();
  d.mass_ge8 = j.at("mass_ge8").get<double>();
  d.mean_bin_index = d.mu_data;
  return d;
}

json record_to_json(const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["shares"] = r.shares;
  j["weight_dist"] = r.weight_dist;
  j["scores"] = r.scores;
  j["multipliers"] = r.multipliers;
  j["adversary_q"] = r.adversary_q;
  j["allocation"] = r.allocation;
  j["arm_prob_chosen"] = r.arm_prob_chosen;
  j["mu"] = r.mu;
  j["realized_mean"] = r.realized_mean;
  j["feasible"] = r.feasible;
  j["loss_count"] = r.loss_count;
  j["loss_sum"] = r.loss_sum;
  j["loss_sumsq"] = r.loss_sumsq;
  j["bin_passk"] = r.bin_passk;
  j["bin_population"] = r.bin_population;
  j["worst_bin_passk"] = r.worst_bin_passk;
  j["diag"] = diag_to_json(r.diag);
  return j;
}

StepRecord record_from_json(const json& j, int bins) {
  StepRecord r;
  r.step = j.at("step").get<long>();
  r.shares = j.at("shares").get<std::vector<double>>();
  r.weight_dist = j.at("weight_dist").get<std::vector<double>>();
  r.scores = j.at("scores").get<std::vector<double>>();
  r.multipliers = j.at("multipliers").get<std::vector<double>>();
  r.adversary_q = j.at("adversary_q").get<std::vector<double>>();
  r.allocation = j.at("allocation").get<std::vector<int>>();
  r.arm_prob_chosen = j.at("arm_prob_chosen").get<std::vector<double>>();
  r.mu = j.at("mu").get<double>();
  r.realized_mean = j.at("realized_mean").get<double>();
  r.feasible = j.at("feasible").get<bool>();
  r.loss_count = j.at("loss_count").get<std::vector<long>>();
  r.loss_sum = j.at("loss_sum").get<std::vector<double>>();
  r.loss_sumsq = j.at("loss_sumsq").get<std::vector<double>>();
  r.bin_passk = j.at("bin_passk").get<std::vector<double>>();
  r.bin_population = j.at("bin_population").get<std::vector<long>>();
  r.worst_bin_passk = j.at("worst_bin_passk").get<double>();
  r.diag = diag_from_json(r.step, j.at("diag"));
  const std::size_t b = static_cast<std::size_t>(bins);
  if (r.shares.size() != b || r.weight_dist.size() != b ||
      r.scores.size() != b || r.multipliers.size() != b ||
      r.adversary_q.size() != b || r.allocation.size() != b ||
      r.arm_prob_chosen.size() != b || r.loss_count.size() != b ||
      r.loss_sum.size() != b || r.loss_sumsq.size() != b ||
      r.bin_passk.size() != b || r.bin_population.size() != b)
    throw std::invalid_argument("per-bin array size does not match config");
  return r;
}

}  // namespace

void write_trace_jsonl(const RunTrace& trace, std::ostream& out) {
  json header;
  header["format"] = "gdro-trace-v1";
  header["config"] = config_to_json(trace.config);
  out << header.dump() << '\n';
  for (const StepRecord& r : trace.records) out << record_to_json(r).dump() << '\n';
}

RunTrace read_trace_jsonl(std::istream& in) {
  RunTrace trace;
  std::string line;
  long line_no = 0;
  long expected_step = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error("trace parse error at line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (!j.contains("format") ||
            j.at("format").get<std::string>() != "gdro-trace-v1")
          throw std::runtime_error("missing or unknown trace format header");
        trace.config = config_from_json(j.at("config"));
        trace.config.validate();
        have_header = true;
        continue;
      }
      StepRecord r = record_from_json(j, trace.config.bins);
      if (r.step != expected_step)
        throw std::runtime_error("non-contiguous step index " +
                                 std::to_string(r.step));
      ++expected_step;
      trace.records.push_back(std::move(r));
    } catch (const std::runtime_error&) {
      throw;
    } catch (const std::exception& e) {
      throw std::runtime_error("bad trace line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  if (!have_header) throw std::runtime_error("empty trace: no header line");
  recompute_diagnostics(trace.config, trace.records, &trace.sigma_hat,
                        &trace.sigma_hat_missing);
  return trace;
}

std::vector<StepDiagnostics> recompute_diagnostics(
    const RunConfig& config, const std::vector<StepRecord>& records,
    std::vector<double>* sigma_hat_out, std::vector<int>* missing_out) {
  const std::size_t b_count = static_cast<std::size_t>(config.bins);

  // sigma_hat: pooled within-bin standard deviation of the prompt-level loss
  // signal over the whole run, held fixed across the WSE time series.
  std::vector<double> count(b_count, 0.0), sum(b_count, 0.0),
      sumsq(b_count, 0.0);
  for (const StepRecord& r : records)
    for (std::size_t b = 0; b < b_count; ++b) {
      count[b] += static_cast<double>(r.loss_count[b]);
      sum[b] += r.loss_sum[b];
      sumsq[b] += r.loss_sumsq[b];
    }
  std::vector<double> sigma_hat(b_count, 0.0);
  std::vector<int> missing;
  for (std::size_t b = 0; b < b_count; ++b) {
    if (count[b] > 0.0) {
      const double mean = sum[b] / count[b];
      sigma_hat[b] = std::sqrt(std::max(0.0, sumsq[b] / count[b] - mean * mean));
    } else {
      missing.push_back(static_cast<int>(b));
    }
  }
  if (sigma_hat_out) *sigma_hat_out = sigma_hat;
  if (missing_out) *missing_out = missing;

  const double uniform_n = config.mode == RunMode::rollout_gdro
                               ? config.mean_budget
                               : static_cast<double>(config.rollouts_per_prompt);
  std::vector<StepDiagnostics> out;
  out.reserve(records.size());
  std::vector<double> alloc(b_count, 0.0), uniform(b_count, uniform_n);
  for (const StepRecord& r : records) {
    StepDiagnostics d;
    d.step = r.step;
    std::tie(d.mu_data, d.mu_weight, d.delta_mu) =
        lead_lag(r.shares, r.weight_dist);
    for (std::size_t b = 0; b < b_count; ++b)
      alloc[b] = static_cast<double>(r.allocation[b]);
    d.wse = weighted_standard_error(r.shares, sigma_hat, alloc);
    d.wse_uniform = weighted_standard_error(r.shares, sigma_hat, uniform);
    d.entropy_q = entropy(r.shares);
    d.entropy_w = entropy(r.weight_dist);
    d.mean_bin_index = d.mu_data;
    d.mass_ge3 = mass_above(r.shares, 3);
    d.mass_ge8 = mass_above(r.shares, 8);
    out.push_back(d);
  }
  return out;
}

void write_diagnostics_csv(const RunTrace& trace, std::ostream& out) {
  out << diagnostics_csv_header() << '\n';
  const std::vector<StepDiagnostics> diag =
      recompute_diagnostics(trace.config, trace.records);
  for (const StepDiagnostics& d : diag) append_diagnostics_csv(out, d);
}

void write_summary_json(const RunTrace& trace, std::ostream& out) {
  json j;
  j["config"] = config_to_json(trace.config);
  j["steps"] = trace.records.size();
  j["sigma_hat"] = trace.sigma_hat;
  j["sigma_hat_missing_bins"] = trace.sigma_hat_missing;
  j["final_worst_bin_passk"] = trace.final_worst_bin_passk();

  std::vector<std::vector<double>> passk_trajectory;
  passk_trajectory.reserve(trace.records.size());
  for (const StepRecord& r : trace.records)
    passk_trajectory.push_back(r.bin_passk);
  j["per_bin_passk_trajectory"] = passk_trajectory;

  double mean_wse = 0.0, mean_wse_uniform = 0.0, mean_delta_mu = 0.0;
  if (!trace.records.empty()) {
    for (const StepRecord& r : trace.records) {
      mean_wse += r.diag.wse;
      mean_wse_uniform += r.diag.wse_uniform;
      mean_delta_mu += r.diag.delta_mu;
    }
    const double n = static_cast<double>(trace.records.size());
    mean_wse /= n;
    mean_wse_uniform /= n;
    mean_delta_mu /= n;
    j["final_mass_ge3"] = trace.records.back().diag.mass_ge3;
    j["final_mass_ge8"] = trace.records.back().diag.mass_ge8;
    j["final_bin_passk"] = trace.records.back().bin_passk;
    j["final_bin_population"] = trace.records.back().bin_population;
  }
  j["mean_wse"] = mean_wse;
  j["mean_wse_uniform"] = mean_wse_uniform;
  j["mean_delta_mu"] = mean_delta_mu;
  out << j.dump(2) << '\n';
}

RunComparison compare_runs(const RunTrace& a, const RunTrace& b) {
  if (a.config.bins != b.config.bins)
    throw std::invalid_argument("traces have different bin structure");

  RunComparison cmp;
  cmp.worst_bin_passk_a = a.final_worst_bin_passk();
  cmp.worst_bin_passk_b = b.final_worst_bin_passk();
  cmp.worst_bin_passk_delta = cmp.worst_bin_passk_b - cmp.worst_bin_passk_a;

  const std::size_t horizon = std::min(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < horizon; ++i) {
    cmp.mean_wse_a += a.records[i].diag.wse;
    cmp.mean_wse_b += b.records[i].diag.wse;
    cmp.mean_delta_mu_a += a.records[i].diag.delta_mu;
    cmp.mean_delta_mu_b += b.records[i].diag.delta_mu;
  }
  if (horizon > 0) {
    const double n = static_cast<double>(horizon);
    cmp.mean_wse_a /= n;
    cmp.mean_wse_b /= n;
    cmp.mean_delta_mu_a /= n;
    cmp.mean_delta_mu_b /= n;
  }
  cmp.wse_reduction = cmp.mean_wse_a != 0.0
                          ? (cmp.mean_wse_a - cmp.mean_wse_b) / cmp.mean_wse_a
                          : 0.0;
  if (!a.records.empty() && !b.records.empty()) {
    cmp.final_mass_ge3_delta =
        b.records.back().diag.mass_ge3 - a.records.back().diag.mass_ge3;
    cmp.final_mass_ge8_delta =
        b.records.back().diag.mass_ge8 - a.records.back().diag.mass_ge8;
  }
  return cmp;
}

void write_comparison_json(const RunComparison& cmp, std::ostream& out) {
  json j;
  j["worst_bin_passk_a"] = cmp.worst_bin_passk_a;
  j["worst_bin_passk_b"] = cmp.worst_bin_passk_b;
  j["worst_bin_passk_delta"] = cmp.worst_bin_passk_delta;
  j["mean_wse_a"] = cmp.mean_wse_a;
  j["mean_wse_b"] = cmp.mean_wse_b;
  j["wse_reduction"] = cmp.wse_reduction;
  j["final_mass_ge3_delta"] = cmp.final_mass_ge3_delta;
  j["final_mass_ge8_delta"] = cmp.final_mass_ge8_delta;
  j["mean_delta_mu_a"] = cmp.mean_delta_mu_a;
  j["mean_delta_mu_b"] = cmp.mean_delta_mu_b;
  out << j.dump(2) << '\n';
}

}  // namespace gdro
