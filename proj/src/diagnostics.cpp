#include "gdro/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace gdro {

std::tuple<double, double, double> lead_lag(std::span<const double> data_share,
                                            std::span<const double> weights) {
  if (data_share.size() != weights.size())
    throw std::invalid_argument("distribution length mismatch");
  double mu_data = 0.0;
  double mu_weight = 0.0;
  for (std::size_t b = 0; b < data_share.size(); ++b) {
    mu_data += static_cast<double>(b) * data_share[b];
    mu_weight += static_cast<double>(b) * weights[b];
  }
  return {mu_data, mu_weight, mu_weight - mu_data};
}

double weighted_standard_error(std::span<const double> data_share,
                               std::span<const double> sigma_hat,
                               std::span<const double> rollouts) {
  if (data_share.size() != sigma_hat.size() ||
      data_share.size() != rollouts.size())
    throw std::invalid_argument("per-bin input size mismatch");
  double wse = 0.0;
  for (std::size_t b = 0; b < data_share.size(); ++b) {
    if (data_share[b] <= 0.0) continue;
    if (sigma_hat[b] < 0.0)
      throw std::invalid_argument("sigma_hat must be >= 0");
    if (rollouts[b] <= 0.0)
      throw std::invalid_argument("rollouts must be > 0 on active bins");
    wse += data_share[b] * sigma_hat[b] / std::sqrt(rollouts[b]);
  }
  return wse;
}

double entropy(std::span<const double> dist) {
  double h = 0.0;
  for (double p : dist)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

double mass_above(std::span<const double> dist, int threshold_bin) {
  if (threshold_bin >= static_cast<int>(dist.size())) return 0.0;
  double m = 0.0;
  for (std::size_t b = std::max(threshold_bin, 0);
       b < dist.size(); ++b)
    m += dist[b];
  return m;
}

const char* diagnostics_csv_header() {
  return "step,mu_data,mu_weight,delta_mu,wse,wse_uniform,entropy_q,"
         "entropy_w,mass_ge3,mass_ge8";
}

namespace {
void put_double(std::ostream& out, double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.write(buf, len);
}
}  // namespace

void append_diagnostics_csv(std::ostream& out, const StepDiagnostics& d) {
  out << d.step << ',';
  put_double(out, d.mu_data);
  out << ',';
  put_double(out, d.mu_weight);
  out << ',';
  put_double(out, d.delta_mu);
  out << ',';
  put_double(out, d.wse);
  out << ',';
  put_double(out, d.wse_uniform);
  out << ',';
  put_double(out, d.entropy_q);
  out << ',';
  put_double(out, d.entropy_w);
  out << ',';
  put_double(out, d.mass_ge3);
  out << ',';
  put_double(out, d.mass_ge8);
  out << '\n';
}

}  // namespace gdro
