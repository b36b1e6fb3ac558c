#pragma once

#include <cmath>

// Closed-form reference values used as independent checks.
namespace oracle {

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

/// Undiscounted E[(X_T - K)+] for X a GBM with drift mu.
inline double bs_call(double x0, double strike, double mu, double sigma, double T) {
  const double fwd = x0 * std::exp(mu * T);
  const double sd = sigma * std::sqrt(T);
  const double d1 = (std::log(fwd / strike) + 0.5 * sd * sd) / sd;
  const double d2 = d1 - sd;
  return fwd * norm_cdf(d1) - strike * norm_cdf(d2);
}

/// Inverse normal CDF by bisection; accurate to ~1e-12.
inline double norm_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (norm_cdf(mid) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace oracle
