#pragma once

#include <iosfwd>
#include <span>
#include <tuple>
#include <vector>

namespace gdro {

// Per-step curriculum diagnostics. `mean_bin_index` duplicates mu_data and is
// kept for the scalar-summary consumers.
struct StepDiagnostics {
  long step = 0;
  double mu_data = 0.0;
  double mu_weight = 0.0;
  double delta_mu = 0.0;
  double wse = 0.0;
  double wse_uniform = 0.0;
  double entropy_q = 0.0;
  double entropy_w = 0.0;
  double mean_bin_index = 0.0;
  double mass_ge3 = 0.0;
  double mass_ge8 = 0.0;
};

// Mean bin indices (bins indexed from 0) of the data-share and weight
// distributions, and their lead-lag gap mu_weight - mu_data.
std::tuple<double, double, double> lead_lag(std::span<const double> data_share,
                                            std::span<const double> weights);

// sum_b q(b) * sigma_hat(b) / sqrt(n(b)); bins with q(b) = 0 are skipped.
double weighted_standard_error(std::span<const double> data_share,
                               std::span<const double> sigma_hat,
                               std::span<const double> rollouts);

// Shannon entropy, natural log, 0 log 0 = 0.
double entropy(std::span<const double> dist);

// Total mass at bins >= threshold; thresholds past the last bin give 0.
double mass_above(std::span<const double> dist, int threshold_bin);

// Fixed column order:
// step,mu_data,mu_weight,delta_mu,wse,wse_uniform,entropy_q,entropy_w,
// mass_ge3,mass_ge8
const char* diagnostics_csv_header();
void append_diagnostics_csv(std::ostream& out, const StepDiagnostics& d);

}  // namespace gdro
