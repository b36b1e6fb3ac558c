#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mlmc {

using Vector = std::vector<double>;

/// Writes f(x) into `out`. Both spans have the model's state dimension.
using StateFunction =
    std::function<void(std::span<const double> x, std::span<double> out)>;

/// dX = b(X) dt + sum_j sigma_j(X) dW^j on [0, horizon], X_0 = x0.
///
/// Immutable once built; the function members must be pure so a model can be
/// shared by any number of workers.
struct SdeModel {
  std::size_t dim_state = 1;
  std::size_t dim_noise = 1;
  StateFunction drift;
  std::vector<StateFunction> diffusion_cols;
  Vector x0;
  double horizon = 1.0;
  std::string label;

  /// Throws InvalidArgument on inconsistent dimensions or a bad horizon.
  void validate() const;
};

/// Terminal-state functional G(X_T).
struct Payoff {
  std::function<double(std::span<const double>)> eval;
  std::string label;
};

/// Time-grid layout shared by every level. Level l (1-based) uses
/// base_steps * refine_factor^(l-1) Euler steps.
struct MlmcConfig {
  int refine_factor = 2;
  int base_steps = 1;
  int max_level = 12;
  std::uint64_t seed = 0;

  void validate() const;
  std::uint64_t steps(int level) const;
  double step_size(int level, double horizon) const;
  /// Scale M^l / ((M-1) T) applied to squared level-l corrections in the
  /// importance-sampling objective; 1 on the first level.
  double is_normalization(int level, double horizon) const;
};

/// Radon-Nikodym factor exp(-<theta, w_T> - |theta|^2 T / 2).
double girsanov_weight(std::span<const double> theta, std::span<const double> w_T,
                       double horizon);

/// x -> b(x) + sigma(x) theta, with sigma(x) the d x q matrix of diffusion
/// columns.
StateFunction shifted_drift(const SdeModel& model, std::span<const double> theta);

/// Evaluates sigma(x) theta into `out` (out is overwritten).
void diffusion_times(const SdeModel& model, std::span<const double> x,
                     std::span<const double> theta, std::span<double> out);

// Built-in catalog ----------------------------------------------------------

SdeModel make_gbm(double x0, double mu, double sigma, double horizon);

/// d assets with common volatility and pairwise correlation rho; the noise is
/// d independent Brownian motions mixed through the Cholesky factor.
SdeModel make_correlated_gbm(std::size_t dim, double x0, double mu, double sigma,
                             double rho, double horizon);

Payoff make_call(double strike);
Payoff make_put(double strike);
/// Call on the arithmetic mean of all state components.
Payoff make_basket_call(double strike);
/// payout * 1{X_0 > strike}.
Payoff make_digital(double strike, double payout);
Payoff make_constant(double value);

struct LipschitzReport {
  double constant = 0.0;
  std::size_t pairs = 0;
};

/// Largest observed ratio (|b(x)-b(y)| + sum_j |s_j(x)-s_j(y)|) / |x-y| over
/// random pairs in the box [lo, hi]^d. Advisory only.
LipschitzReport lipschitz_diagnostic(const SdeModel& model, double lo, double hi,
                                     std::size_t pairs, std::uint64_t seed);

}  // namespace mlmc
