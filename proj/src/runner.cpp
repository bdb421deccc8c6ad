#include "gdro/runner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace gdro {

const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::baseline_grpo: return "baseline_grpo";
    case RunMode::prompt_gdro: return "prompt_gdro";
    case RunMode::rollout_gdro: return "rollout_gdro";
  }
  return "unknown";
}

RunMode parse_run_mode(const std::string& name) {
  if (name == "baseline_grpo") return RunMode::baseline_grpo;
  if (name == "prompt_gdro") return RunMode::prompt_gdro;
  if (name == "rollout_gdro") return RunMode::rollout_gdro;
  throw std::invalid_argument("unknown mode: " + name);
}

void RunConfig::validate() const {
  const auto fail = [](const std::string& msg) {
    throw std::invalid_argument("config: " + msg);
  };
  if (population_size < 1) fail("population_size must be >= 1");
  if (batch_size < 1 || batch_size > population_size)
    fail("batch_size must be in [1, population_size]");
  if (steps < 0) fail("steps must be >= 0");
  if (answer_count < 2) fail("answer_count must be >= 2");
  if (kl_coefficient < 0.0) fail("kl_coefficient must be >= 0");
  if (clip_low <= 0.0 || clip_low >= 1.0) fail("clip_low must be in (0, 1)");
  if (clip_high <= 0.0) fail("clip_high must be > 0");
  if (advantage_epsilon <= 0.0) fail("advantage_epsilon must be > 0");
  if (advantage_clip <= 0.0) fail("advantage_clip must be > 0");
  if (learning_rate <= 0.0) fail("learning_rate must be > 0");
  if (difficulty_tail <= 0.0) fail("difficulty_tail must be > 0");
  if (dead_fraction < 0.0 || dead_fraction > 1.0)
    fail("dead_fraction must be in [0, 1]");
  if (min_initial_passk <= 0.0 || max_initial_passk >= 1.0 ||
      min_initial_passk > dead_max_passk || dead_max_passk > live_min_passk ||
      live_min_passk >= max_initial_passk)
    fail("initial pass@k bands must satisfy 0 < min <= dead_max <= "
         "live_min < max < 1");
  if (bins < 1) fail("bins must be >= 1");
  if (window_length < 1) fail("window_length must be >= 1");
  if (hysteresis_margin < 0.0 || hysteresis_margin >= 1.0 / bins)
    fail("hysteresis_margin must be in [0, 1/bins)");
  if (pass_k < 1) fail("pass_k must be >= 1");
  if (score_ema_decay < 0.0 || score_ema_decay > 1.0)
    fail("score_ema_decay must be in [0, 1]");
  if (adversary_learning_rate < 0.0) fail("adversary_learning_rate < 0");
  if (score_clip <= 0.0) fail("score_clip must be > 0");
  if (exploration < 0.0 || exploration > 1.0)
    fail("exploration must be in [0, 1]");
  if (weight_cap <= 0.0) fail("weight_cap must be > 0");
  if (share_floor <= 0.0 || share_floor > 1.0)
    fail("share_floor must be in (0, 1]");
  if (arm_min < 1 || arm_max < arm_min) fail("invalid arm range");
  if (mean_budget <= 0.0) fail("mean_budget must be > 0");
  if (dual_rate < 0.0) fail("dual_rate must be >= 0");
  if (dual_cap < 0.0) fail("dual_cap must be >= 0");
  if (arm_ema_decay <= 0.0 || arm_ema_decay > 1.0)
    fail("arm_ema_decay must be in (0, 1]");
  if (arm_learning_rate < 0.0) fail("arm_learning_rate < 0");
  if (arm_exploration < 0.0 || arm_exploration > 1.0)
    fail("arm_exploration must be in [0, 1]");
  if (rollouts_per_prompt < 1) fail("rollouts_per_prompt must be >= 1");
  if (mode == RunMode::rollout_gdro) {
    const double target = mean_budget * batch_size;
    if (std::abs(target - std::round(target)) > 1e-9)
      fail("mean_budget * batch_size must be an integer");
    if (mean_budget < arm_min || mean_budget > arm_max)
      fail("mean_budget must lie within the arm range");
  }
}

namespace {

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("expected boolean, got: " + v);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  std::size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::set_key(const std::string& key, const std::string& value) {
  const auto to_i = [&] { return std::stoi(value); };
  const auto to_d = [&] { return std::stod(value); };
  if (key == "population_size") population_size = to_i();
  else if (key == "batch_size") batch_size = to_i();
  else if (key == "steps") steps = to_i();
  else if (key == "mode") mode = parse_run_mode(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "answer_count") answer_count = to_i();
  else if (key == "reward_correct") reward_correct = to_d();
  else if (key == "reward_incorrect") reward_incorrect = to_d();
  else if (key == "kl_coefficient") kl_coefficient = to_d();
  else if (key == "clip_low") clip_low = to_d();
  else if (key == "clip_high") clip_high = to_d();
  else if (key == "advantage_epsilon") advantage_epsilon = to_d();
  else if (key == "advantage_clip") advantage_clip = to_d();
  else if (key == "learning_rate") learning_rate = to_d();
  else if (key == "difficulty_tail") difficulty_tail = to_d();
  else if (key == "dead_fraction") dead_fraction = to_d();
  else if (key == "min_initial_passk") min_initial_passk = to_d();
  else if (key == "dead_max_passk") dead_max_passk = to_d();
  else if (key == "live_min_passk") live_min_passk = to_d();
  else if (key == "max_initial_passk") max_initial_passk = to_d();
  else if (key == "bins") bins = to_i();
  else if (key == "window_length") window_length = to_i();
  else if (key == "hysteresis_margin") hysteresis_margin = to_d();
  else if (key == "pass_k") pass_k = to_i();
  else if (key == "score_ema_decay") score_ema_decay = to_d();
  else if (key == "adversary_learning_rate") adversary_learning_rate = to_d();
  else if (key == "score_clip") score_clip = to_d();
  else if (key == "exploration") exploration = to_d();
  else if (key == "weight_cap") weight_cap = to_d();
  else if (key == "share_floor") share_floor = to_d();
  else if (key == "normalize_by_share") normalize_by_share = parse_bool(value);
  else if (key == "arm_min") arm_min = to_i();
  else if (key == "arm_max") arm_max = to_i();
  else if (key == "mean_budget") mean_budget = to_d();
  else if (key == "dual_rate") dual_rate = to_d();
  else if (key == "dual_cap") dual_cap = to_d();
  else if (key == "arm_ema_decay") arm_ema_decay = to_d();
  else if (key == "arm_learning_rate") arm_learning_rate = to_d();
  else if (key == "arm_exploration") arm_exploration = to_d();
  else if (key == "count_weighted_objective")
    count_weighted_objective = parse_bool(value);
  else if (key == "rollouts_per_prompt") rollouts_per_prompt = to_i();
  else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig RunConfig::from_stream(std::istream& in) {
  RunConfig config;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string trimmed = trim(line);
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected `key = value`");
    const std::string key = trim(trimmed.substr(0, eq));
    const std::string value = trim(trimmed.substr(eq + 1));
    try {
      config.set_key(key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": " + e.what());
    }
  }
  config.validate();
  return config;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return from_stream(in);
}

double RunTrace::final_worst_bin_passk() const {
  return records.empty() ? 0.0 : records.back().worst_bin_passk;
}

namespace {

// Purpose tags for keyed RNG substreams.
constexpr std::uint64_t kStreamBatch = 1;
constexpr std::uint64_t kStreamTrack = 2;
constexpr std::uint64_t kStreamTrain = 3;

std::vector<SyntheticPrompt> build_population(const RunConfig& config) {
  Rng rng = Rng::stream(config.seed, 0x706f70ULL);
  std::vector<SyntheticPrompt> prompts(
      static_cast<std::size_t>(config.population_size));
  const double live_span = config.max_initial_passk - config.live_min_passk;
  const double dead_span = config.dead_max_passk - config.min_initial_passk;
  for (int i = 0; i < config.population_size; ++i) {
    SyntheticPrompt& p = prompts[static_cast<std::size_t>(i)];
    p.uid = static_cast<PromptUid>(i);
    p.correct_answer =
        static_cast<int>(rng.next_index(
            static_cast<std::size_t>(config.answer_count)));
    // Heavy-tailed initial pass@k spectrum: a hard core that stays nearly
    // unsolvable over the run plus a live band skewed toward its hard end,
    // so the exact initial pass@k values span every bin of the default
    // partition.
    double target;
    if (rng.next_double() < config.dead_fraction) {
      target = config.min_initial_passk + dead_span * rng.next_double();
    } else {
      target = config.live_min_passk +
               live_span * std::pow(rng.next_double(), config.difficulty_tail);
    }
    const double p_correct =
        1.0 - std::pow(1.0 - target, 1.0 / config.pass_k);
    // p = exp(-d) / (exp(-d) + A - 1)  =>  d = log((1 - p) / (p (A - 1))).
    p.latent_difficulty =
        std::log((1.0 - p_correct) /
                 (p_correct * (config.answer_count - 1)));
  }
  return prompts;
}

}  // namespace

RunTrace run(const RunConfig& config) {
  config.validate();

  RunTrace trace;
  trace.config = config;

  GrpoOptions world_options;
  world_options.answer_count = config.answer_count;
  world_options.reward_correct = config.reward_correct;
  world_options.reward_incorrect = config.reward_incorrect;
  world_options.kl_coefficient = config.kl_coefficient;
  world_options.clip_low = config.clip_low;
  world_options.clip_high = config.clip_high;
  world_options.advantage_epsilon = config.advantage_epsilon;
  world_options.advantage_clip = config.advantage_clip;
  world_options.learning_rate = config.learning_rate;
  TabularGrpoWorld world(build_population(config), world_options);

  const BinPartition partition = BinPartition::uniform(config.bins);
  DifficultyTracker tracker(config.window_length, config.pass_k,
                            config.hysteresis_margin);

  PromptAdversaryOptions adv_options;
  adv_options.ema_decay = config.score_ema_decay;
  adv_options.learning_rate = config.adversary_learning_rate;
  adv_options.score_clip = config.score_clip;
  adv_options.exploration = config.exploration;
  adv_options.weight_cap = config.weight_cap;
  adv_options.share_floor = config.share_floor;
  adv_options.normalize_by_share = config.normalize_by_share;
  PromptAdversary adversary(config.bins, adv_options);

  BudgeterOptions budget_options;
  budget_options.arm_min = config.arm_min;
  budget_options.arm_max = config.arm_max;
  budget_options.arm_ema_decay = config.arm_ema_decay;
  budget_options.arm_learning_rate = config.arm_learning_rate;
  budget_options.arm_exploration = config.arm_exploration;
  budget_options.mean_budget = config.mean_budget;
  budget_options.dual_rate = config.dual_rate;
  budget_options.dual_cap = config.dual_cap;
  budget_options.count_weighted_objective = config.count_weighted_objective;
  RolloutBudgeter budgeter(config.bins, budget_options);

  const std::size_t b_count = static_cast<std::size_t>(config.bins);
  const bool prompt_mode = config.mode == RunMode::prompt_gdro;
  const bool rollout_mode = config.mode == RunMode::rollout_gdro;

  // Evaluation groups frozen from the initial exact pass@k: without
  // cross-prompt generalization a fixed partition is what makes worst-group
  // progress measurable (the dynamic tracker bins stay the adversaries'
  // groups).
  std::vector<int> eval_bin_of(world.prompt_count());
  for (std::size_t i = 0; i < world.prompt_count(); ++i)
    eval_bin_of[i] = partition.locate(
        world.exact_pass_at_k(world.prompts()[i].uid, config.pass_k));

  std::vector<PromptUid> batch(static_cast<std::size_t>(config.batch_size));
  std::vector<std::size_t> population_order(
      static_cast<std::size_t>(config.population_size));
  std::vector<bool> track_flags;
  trace.records.reserve(static_cast<std::size_t>(config.steps));

  for (int step = 0; step < config.steps; ++step) {
    StepRecord rec;
    rec.step = step;

    // Uniform batch without replacement via a partial Fisher-Yates pass.
    std::iota(population_order.begin(), population_order.end(), 0u);
    Rng batch_rng = Rng::stream(config.seed, kStreamBatch,
                                static_cast<std::uint64_t>(step));
    for (int i = 0; i < config.batch_size; ++i) {
      const std::size_t j =
          i + batch_rng.next_index(population_order.size() - i);
      std::swap(population_order[static_cast<std::size_t>(i)],
                population_order[j]);
      batch[static_cast<std::size_t>(i)] =
          static_cast<PromptUid>(population_order[static_cast<std::size_t>(i)]);
    }

    // Tracking outcomes. Prompt/baseline modes sample k dedicated tracking
    // rollouts per batch prompt; rollout mode reuses the allocated training
    // rollouts and only bootstraps never-seen prompts so they are binnable.
    for (PromptUid uid : batch) {
      if (rollout_mode && tracker.seen(uid)) continue;
      Rng track_rng = Rng::stream(config.seed, kStreamTrack,
                                  static_cast<std::uint64_t>(step), uid);
      const std::vector<double> probs = world.behavior_probs(uid);
      const int correct = world.prompt(uid).correct_answer;
      track_flags.assign(static_cast<std::size_t>(config.pass_k), false);
      for (int j = 0; j < config.pass_k; ++j)
        track_flags[static_cast<std::size_t>(j)] =
            static_cast<int>(track_rng.sample_categorical(probs)) == correct;
      tracker.record_outcome(uid, track_flags);
    }

    std::vector<int> bin_of_batch(batch.size());
    std::vector<int> counts(b_count, 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int bin = tracker.assign_bin(partition, batch[i]);
      bin_of_batch[i] = bin;
      ++counts[static_cast<std::size_t>(bin)];
    }
    rec.shares.assign(b_count, 0.0);
    for (std::size_t b = 0; b < b_count; ++b)
      rec.shares[b] = static_cast<double>(counts[b]) /
                      static_cast<double>(config.batch_size);

    // Rollout counts for this step.
    rec.allocation.assign(b_count, config.rollouts_per_prompt);
    rec.arm_prob_chosen.assign(b_count, 0.0);
    AllocationResult allocation;
    if (rollout_mode) {
      allocation = budgeter.select_allocation(counts, config.batch_size);
      for (std::size_t b = 0; b < b_count; ++b) {
        rec.allocation[b] = allocation.arms[b];
        if (counts[b] > 0)
          rec.arm_prob_chosen[b] = budgeter.arm_probability(
              static_cast<int>(b), allocation.arms[b]);
      }
      rec.realized_mean = allocation.realized_mean;
      rec.feasible = allocation.feasible;
    } else {
      rec.realized_mean = config.rollouts_per_prompt;
      rec.feasible = true;
    }

    // Training rollouts and the observable loss signal. The signal is the
    // reward-form KL-regularized loss -r + beta KL per rollout (the
    // clipped-surrogate value is identically zero at the sampling snapshot
    // in this single-epoch tabular setting, so it carries no bin signal).
    // Stats are pooled across rollouts: the bin mean is the mean prompt
    // loss, and the pooled variance is the intrinsic variance proxy the
    // budgeter prices.
    rec.loss_count.assign(b_count, 0);
    rec.loss_sum.assign(b_count, 0.0);
    rec.loss_sumsq.assign(b_count, 0.0);
    std::vector<RolloutGroup> groups(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const PromptUid uid = batch[i];
      const int bin = bin_of_batch[i];
      const int n = rec.allocation[static_cast<std::size_t>(bin)];
      Rng train_rng = Rng::stream(config.seed, kStreamTrain,
                                  static_cast<std::uint64_t>(step), uid);
      groups[i] = world.sample_rollout_group(uid, n, train_rng);

      const std::size_t b = static_cast<std::size_t>(bin);
      const double kl_term =
          config.kl_coefficient * world.kl_to_reference(uid);
      for (double r : groups[i].rewards) {
        const double signal = -r + kl_term;
        ++rec.loss_count[b];
        rec.loss_sum[b] += signal;
        rec.loss_sumsq[b] += signal * signal;
      }
    }

    std::vector<std::optional<double>> bin_mean_losses(b_count);
    for (std::size_t b = 0; b < b_count; ++b)
      if (rec.loss_count[b] > 0)
        bin_mean_losses[b] =
            rec.loss_sum[b] / static_cast<double>(rec.loss_count[b]);

    // Prompt adversary: scores absorb this step's losses, then the capped
    // multipliers scale this step's advantages.
    rec.multipliers.assign(b_count, 1.0);
    if (prompt_mode) {
      adversary.update_scores(bin_mean_losses, rec.shares);
      for (std::size_t b = 0; b < b_count; ++b)
        rec.multipliers[b] =
            adversary.advantage_multiplier(static_cast<int>(b));
    }
    rec.scores.assign(adversary.scores().begin(), adversary.scores().end());
    rec.weight_dist = adversary.weight_distribution();
    rec.adversary_q = adversary.bin_distribution();

    // Rollout budgeter: bandit feedback is the penalized arm loss built from
    // the bin's empirical variance proxy (pooled variance of the per-rollout
    // losses across the bin's rollouts), then the dual absorbs the realized
    // consumption.
    if (rollout_mode) {
      for (std::size_t b = 0; b < b_count; ++b) {
        if (counts[b] == 0) continue;
        const int arm = allocation.arms[b];
        const double mean_loss =
            rec.loss_sum[b] / static_cast<double>(rec.loss_count[b]);
        const double pooled_var =
            rec.loss_sumsq[b] / static_cast<double>(rec.loss_count[b]) -
            mean_loss * mean_loss;
        const double utility = -(pooled_var / static_cast<double>(arm));
        const double observed = budgeter.arm_loss(utility, arm);
        budgeter.update_arm_scores(static_cast<int>(b), arm, observed);
      }
      budgeter.update_dual(allocation.realized_mean);
    }
    rec.mu = budgeter.dual();

    // Learner step: weighted clipped-surrogate gradients, one group per
    // batch prompt.
    std::vector<std::pair<PromptUid, std::vector<double>>> grads;
    grads.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double weight =
          rec.multipliers[static_cast<std::size_t>(bin_of_batch[i])];
      grads.emplace_back(batch[i],
                         world.prompt_gradient(groups[i], weight));
    }
    world.apply_updates(grads);

    // Rollout mode records its any-of-n indicator from the training
    // rollouts, feeding the next step's bins.
    if (rollout_mode) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        track_flags.assign(groups[i].rewards.size(), false);
        for (std::size_t j = 0; j < groups[i].rewards.size(); ++j)
          track_flags[j] = groups[i].rewards[j] > 0.0;
        tracker.record_outcome(batch[i], track_flags);
      }
    }

    world.refresh_behavior();

    // Exact pass@k per frozen evaluation group under the updated policy.
    rec.bin_passk.assign(b_count, 0.0);
    rec.bin_population.assign(b_count, 0);
    for (std::size_t i = 0; i < world.prompt_count(); ++i) {
      const std::size_t b = static_cast<std::size_t>(eval_bin_of[i]);
      rec.bin_passk[b] +=
          world.exact_pass_at_k(world.prompts()[i].uid, config.pass_k);
      ++rec.bin_population[b];
    }
    double worst = 1.0;
    for (std::size_t b = 0; b < b_count; ++b) {
      if (rec.bin_population[b] == 0) continue;
      rec.bin_passk[b] /= static_cast<double>(rec.bin_population[b]);
      worst = std::min(worst, rec.bin_passk[b]);
    }
    rec.worst_bin_passk = worst;

    trace.records.push_back(std::move(rec));
  }

  // Diagnostics are a pure function of the records; computing them through
  // the same path the replay uses keeps live and replayed values identical.
  const std::vector<StepDiagnostics> diag = recompute_diagnostics(
      config, trace.records, &trace.sigma_hat, &trace.sigma_hat_missing);
  for (std::size_t i = 0; i < diag.size(); ++i)
    trace.records[i].diag = diag[i];
  return trace;
}

}  // namespace gdro
