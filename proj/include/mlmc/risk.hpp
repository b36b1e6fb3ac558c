#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mlmc/estimator.hpp"
#include "mlmc/random.hpp"

namespace mlmc {

/// Closed forms available for test problems.
struct RiskOracle {
  std::function<double(double y)> cond_mean;
  std::function<double(double y)> cond_sd;
  /// P(E[X|Y] > threshold).
  std::function<double(double threshold)> eta;
};

/// Nested expectation eta = P(E[X|Y] > threshold). `inner` returns one loss
/// sample given the scenario; for a portfolio it is already the average over
/// the K constituents, and each call is charged K units of cost.
struct RiskProblem {
  std::function<double(RandomStream&)> outer;
  std::function<double(double y, RandomStream&)> inner;
  double threshold = 0.0;
  int portfolio_size = 1;
  std::optional<RiskOracle> oracle;
  std::string label;

  void validate() const;
};

/// Y ~ N(0,1), X|Y=y the average of K equal losses y + xi with one shared
/// xi ~ N(0,1). E[X|Y] = Y and eta = Phi(-threshold).
RiskProblem make_gaussian_problem(double threshold, int portfolio_size = 1);

struct InnerMean {
  double z_hat = 0.0;
  double sigma_hat = 0.0;
};

/// Mean and sample standard deviation of n inner losses for scenario y.
InnerMean inner_mean(const RiskProblem& problem, double y, std::uint64_t n, const StreamKey& key);

struct AdaptiveConfig {
  double confidence_const = 3.0;  ///< C
  double exponent_r = 1.25;       ///< r
  double moment_q = 6.0;          ///< q
  double eps_cap_const = 1.0;     ///< c_N in the ceil(c_N / eps) cap
  std::uint64_t n0_inner = 16;    ///< N_0
  /// Use the oracle's conditional mean and deviation instead of estimates.
  bool perfect = false;

  void validate() const;
};

/// Inner sample count required on `level` for a scenario whose conditional
/// mean sits mu above the threshold with conditional deviation sigma:
/// min(N0 4^l max(2^-l, min(1, (sqrt(N0) 2^l |mu| / (C sigma))^-r)),
///     ceil(max(c_N / eps, C^2 sigma^2 / mu^2))), clamped to [N0 2^l, N0 4^l].
std::uint64_t adaptive_required_samples(int level, double mu, double sigma,
                                        const AdaptiveConfig& cfg, double eps);

enum class InnerFunctional { heaviside, positive_part };
enum class NestedScheme { uniform, adaptive };

struct InnerDraw {
  double fine = 0.0;    ///< functional of the fine inner mean
  double coarse = 0.0;  ///< functional of the coarse inner mean; 0 on level 0
  std::uint64_t n_fine = 0;
  std::uint64_t n_coarse = 0;
  double cost = 0.0;  ///< inner samples drawn, times K
};

/// Adaptive inner sampling for one scenario. Samples are drawn from one
/// stream in doubling batches starting at N0; after each batch the moments
/// are re-estimated and the loop stops once the count reaches the required
/// number. The coarse value applies the level-(l-1) rule to a prefix of the
/// same stream.
InnerDraw adaptive_inner(const RiskProblem& problem, double y, int level, const AdaptiveConfig& cfg,
                         double eps, const StreamKey& key,
                         InnerFunctional functional = InnerFunctional::heaviside,
                         std::optional<double> threshold = std::nullopt);

/// Everything that defines the level-l correction of a nested estimator.
struct NestedSpec {
  NestedScheme scheme = NestedScheme::uniform;
  InnerFunctional functional = InnerFunctional::heaviside;
  /// Threshold L inside the functional; defaults to the problem's.
  std::optional<double> threshold;
  /// Uniform scheme: level l uses n0_inner * 2^l inner samples.
  std::uint64_t n0_inner = 16;
  AdaptiveConfig adaptive;
  /// Accuracy target used by the adaptive cap.
  double eps = 0.01;
  std::uint64_t seed = 0;
};

/// Adds n_new scenarios of level `level` to `existing`.
LevelStats nested_level_stats(const RiskProblem& problem, const NestedSpec& spec, int level,
                              std::uint64_t n_new, const LevelStats& existing,
                              const Execution& exec = {});

struct RiskEstimate {
  /// Estimate of E[f(E[X|Y] - L)]; for the Heaviside functional clamped to
  /// [0, 1].
  double eta = 0.0;
  double raw_value = 0.0;
  double std_error = 0.0;
  std::vector<LevelStats> levels;
  double total_inner_samples = 0.0;
  double total_cost = 0.0;
  std::optional<RateEstimates> rates;
  /// Least-squares slope of log2 Var_l against l over levels >= 1.
  std::optional<double> variance_slope;
  bool bias_converged = false;
  std::vector<std::string> warnings;
};

struct NestedOptions {
  RunOptions run;
  int max_level = 10;
};

/// eta_hat = (1/M) sum_m H(inner_mean(y_m, N) - L).
RiskEstimate nested_mc(const RiskProblem& problem, std::uint64_t outer, std::uint64_t inner,
                       std::uint64_t seed, const Execution& exec = {});

/// Multilevel estimator over levels 0..max_level for any NestedSpec.
RiskEstimate nested_mlmc(const RiskProblem& problem, const NestedSpec& spec, double eps,
                         const NestedOptions& options = {});

RiskEstimate nested_mlmc_uniform(const RiskProblem& problem, double eps, std::uint64_t seed,
                                 const NestedOptions& options = {}, std::uint64_t n0_inner = 16);

RiskEstimate nested_mlmc_adaptive(const RiskProblem& problem, double eps,
                                  const AdaptiveConfig& cfg, std::uint64_t seed,
                                  const NestedOptions& options = {});

struct BisectionStep {
  double threshold = 0.0;
  double eta = 0.0;
  double std_error = 0.0;
  double cost = 0.0;
};

struct VarCvarOptions {
  NestedOptions nested;
  AdaptiveConfig adaptive;
  std::uint64_t pilot_scenarios = 10000;
  std::uint64_t pilot_inner = 64;
  int max_bisections = 40;
  std::uint64_t seed = 0;
};

struct VarCvarResult {
  double quantile = 0.0;
  double eps = 0.0;
  double var = 0.0;
  double cvar = 0.0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  /// "bracket_width" or "confidence_interval".
  std::string stop_cause;
  double density = 0.0;
  double eta_eps = 0.0;
  std::vector<BisectionStep> steps;
  RiskEstimate tail;  ///< estimate of E[(E[X|Y] - VaR)+]
  double cvar_std_error = 0.0;
  /// Pilot, bisection and tail costs together.
  double total_cost = 0.0;
};

/// VaR by bisection on eta(L) = quantile with common random numbers; CVaR as
/// VaR + E[(E[X|Y] - VaR)+] / quantile.
VarCvarResult var_cvar(const RiskProblem& problem, double quantile, double eps,
                       const VarCvarOptions& options = {});

}  // namespace mlmc
