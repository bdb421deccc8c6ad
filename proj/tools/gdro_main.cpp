// Command-line driver: closed-loop simulation, analytical verification
// suites, the square-root allocation helper, trace comparison and
// diagnostics replay.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gdro/runner.hpp"
#include "gdro/theory.hpp"
#include "gdro/verification.hpp"
#include "json.hpp"

namespace {

using nlohmann::json;

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

int run_simulate(const std::string& config_path, const std::string& out_dir) {
  gdro::RunConfig config = gdro::RunConfig::from_file(config_path);
  if (const char* env_seed = std::getenv("GDRO_SEED")) {
    config.seed = std::stoull(env_seed);
  }
  config.validate();

  const gdro::RunTrace trace = gdro::run(config);

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/trace.jsonl");
    gdro::write_trace_jsonl(trace, out);
  }
  {
    std::ofstream out(out_dir + "/diagnostics.csv");
    gdro::write_diagnostics_csv(trace, out);
  }
  {
    std::ofstream out(out_dir + "/summary.json");
    gdro::write_summary_json(trace, out);
  }
  std::cout << "mode=" << gdro::to_string(config.mode)
            << " steps=" << trace.records.size()
            << " final_worst_bin_passk=" << trace.final_worst_bin_passk()
            << " -> " << out_dir << '\n';
  return 0;
}

json lse_json(const gdro::LseSuiteResult& r) {
  return json{{"suite", "lse"},
              {"vectors", r.vectors},
              {"sandwich_violations", r.sandwich_violations},
              {"max_variational_residual", r.max_variational_residual},
              {"gradient_instances", r.gradient_instances},
              {"max_gradient_rel_error", r.max_gradient_rel_error},
              {"bounds", {{"variational_residual", 1e-10},
                          {"gradient_rel_error", 1e-6}}},
              {"passed", r.passed}};
}

json sqrt_json(const gdro::SqrtSuiteResult& r) {
  return json{{"suite", "sqrt"},
              {"instances", r.instances},
              {"max_allocation_error", r.max_allocation_error},
              {"max_budget_residual", r.max_budget_residual},
              {"optimal_above_uniform", r.optimal_above_uniform},
              {"max_equal_case_gap", r.max_equal_case_gap},
              {"bounds", {{"allocation_error", 1e-9}}},
              {"passed", r.passed}};
}

json game_json(const gdro::ConvexGameSuiteResult& r) {
  return json{{"suite", "game"},
              {"specs", r.specs},
              {"seeds_per_spec", r.seeds_per_spec},
              {"bound_violations", r.bound_violations},
              {"max_gap_to_bound_ratio", r.max_gap_to_bound_ratio},
              {"inner_solves_valid", r.inner_solves_valid},
              {"mean_gap_T2500", r.mean_gap_small_horizon},
              {"mean_gap_T40000", r.mean_gap_large_horizon},
              {"trend_ok", r.trend_ok},
              {"passed", r.passed}};
}

json rollout_game_json(const gdro::RolloutGameSuiteResult& r) {
  return json{{"suite", "rollout-game"},
              {"specs", r.specs},
              {"gap_bound_violations", r.gap_bound_violations},
              {"objective_gap_violations", r.objective_gap_violations},
              {"budget_bound_violations", r.budget_bound_violations},
              {"max_gap_to_bound_ratio", r.max_gap_to_bound_ratio},
              {"passed", r.passed}};
}

json softmin_json(const gdro::SoftminSuiteResult& r) {
  return json{{"suite", "softmin"},
              {"vectors", r.vectors},
              {"sandwich_violations", r.sandwich_violations},
              {"passed", r.passed}};
}

json efron_stein_json(const gdro::EfronSteinSuiteResult& r) {
  json cases = json::array();
  for (const gdro::BoundedDiffReport& rep : r.reports) {
    cases.push_back(json{{"score_bound", rep.score_bound},
                         {"bd_constant", rep.bd_constant},
                         {"trials", rep.trials},
                         {"max_observed_diff", rep.max_observed_diff},
                         {"violations", rep.violations},
                         {"mc_variance", rep.mc_variance},
                         {"variance_bound", rep.variance_bound},
                         {"variance_stderr", rep.variance_stderr},
                         {"diff_ok", rep.diff_ok},
                         {"variance_ok", rep.variance_ok}});
  }
  return json{{"suite", "efron-stein"},
              {"total_trials", r.total_trials},
              {"violations", r.violations},
              {"variance_bounds_ok", r.variance_bounds_ok},
              {"variance_trend_ok", r.variance_trend_ok},
              {"cases", cases},
              {"passed", r.passed}};
}

int run_theory_check(const std::string& suite, const std::string& out_path,
                     std::uint64_t seed) {
  json results = json::array();
  bool all_passed = true;
  const auto want = [&](const char* name) {
    return suite.empty() || suite == name;
  };

  if (want("lse")) {
    const auto r = gdro::run_lse_suite(1000, 100, seed);
    results.push_back(lse_json(r));
    all_passed &= r.passed;
  }
  if (want("sqrt")) {
    const auto r = gdro::run_sqrt_suite(100, seed);
    results.push_back(sqrt_json(r));
    all_passed &= r.passed;
  }
  if (want("softmin")) {
    const auto r = gdro::run_softmin_suite(1000, seed);
    results.push_back(softmin_json(r));
    all_passed &= r.passed;
  }
  if (want("game")) {
    const auto r = gdro::run_convex_game_suite(20, 50, 10000, seed);
    results.push_back(game_json(r));
    all_passed &= r.passed;
  }
  if (want("rollout-game")) {
    const auto r = gdro::run_rollout_game_suite(20, 10000, seed);
    results.push_back(rollout_game_json(r));
    all_passed &= r.passed;
  }
  if (want("efron-stein")) {
    const auto r = gdro::run_efron_stein_suite(20000, 10000, seed);
    results.push_back(efron_stein_json(r));
    all_passed &= r.passed;
  }

  const json report{{"results", results}, {"passed", all_passed}};
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    out << report.dump(2) << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return all_passed ? 0 : 1;
}

int run_sqrt_law(const std::string& v_csv, const std::string& q_csv,
                 double budget) {
  gdro::VarianceAllocQuery query;
  query.variances = parse_double_list(v_csv);
  query.shares = parse_double_list(q_csv);
  query.budget = budget;
  const gdro::SqrtAllocationResult r = gdro::sqrt_allocation(query);
  const json out{{"allocation", r.allocation},
                 {"optimal_value", r.optimal_value},
                 {"uniform_value", r.uniform_value}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int run_report(const std::string& path_a, const std::string& path_b) {
  std::ifstream in_a(path_a), in_b(path_b);
  if (!in_a) throw std::runtime_error("cannot open trace: " + path_a);
  if (!in_b) throw std::runtime_error("cannot open trace: " + path_b);
  const gdro::RunTrace a = gdro::read_trace_jsonl(in_a);
  const gdro::RunTrace b = gdro::read_trace_jsonl(in_b);
  gdro::write_comparison_json(gdro::compare_runs(a, b), std::cout);
  return 0;
}

int run_replay(const std::string& trace_path, const std::string& out_path) {
  std::ifstream in(trace_path);
  if (!in) throw std::runtime_error("cannot open trace: " + trace_path);
  const gdro::RunTrace trace = gdro::read_trace_jsonl(in);
  if (out_path.empty() || out_path == "-") {
    gdro::write_diagnostics_csv(trace, std::cout);
  } else {
    std::ofstream out(out_path);
    gdro::write_diagnostics_csv(trace, out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial curriculum training games on a tabular GRPO "
               "testbed"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  CLI::App* simulate = app.add_subcommand(
      "simulate", "Run one closed-loop training simulation");
  simulate->add_option("--config", config_path, "flat key = value config file")
      ->required();
  simulate->add_option("--out", out_dir, "output directory")->required();

  std::string suite, check_out;
  std::uint64_t seed = 20240817;
  CLI::App* theory = app.add_subcommand(
      "theory-check", "Run the analytical verification suites");
  theory->add_option("--suite", suite,
                     "lse|game|sqrt|softmin|rollout-game|efron-stein "
                     "(default: all)");
  theory->add_option("--out", check_out, "write the JSON report to a file");
  theory->add_option("--seed", seed, "suite RNG seed");

  std::string v_csv, q_csv;
  double budget = 4.0;
  CLI::App* sqrt_law = app.add_subcommand(
      "sqrt-law", "Variance-optimal rollout allocation (closed form)");
  sqrt_law->add_option("--v", v_csv, "per-bin variances, comma separated")
      ->required();
  sqrt_law->add_option("--q", q_csv, "per-bin shares, comma separated")
      ->required();
  sqrt_law->add_option("--budget", budget, "mean rollout budget")->required();

  std::string path_a, path_b;
  CLI::App* report = app.add_subcommand(
      "report", "Compare two run traces (deltas are B minus A)");
  report->add_option("--a", path_a, "reference trace.jsonl")->required();
  report->add_option("--b", path_b, "candidate trace.jsonl")->required();

  std::string trace_path, replay_out;
  CLI::App* replay = app.add_subcommand(
      "replay", "Recompute diagnostics.csv from a trace file");
  replay->add_option("--trace", trace_path, "trace.jsonl")->required();
  replay->add_option("--out", replay_out, "output CSV (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return run_simulate(config_path, out_dir);
    if (theory->parsed()) return run_theory_check(suite, check_out, seed);
    if (sqrt_law->parsed()) return run_sqrt_law(v_csv, q_csv, budget);
    if (report->parsed()) return run_report(path_a, path_b);
    if (replay->parsed()) return run_replay(trace_path, replay_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
