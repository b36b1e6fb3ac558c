#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlmc/error.hpp"
#include "mlmc/level_stats.hpp"
#include "mlmc/model.hpp"
#include "mlmc/parallel.hpp"

namespace mlmc {

/// Least-squares decay rates of |mean|, variance and cost per sample, in
/// log2 units per level.
struct RateEstimates {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
  int fit_first = 0;
  int fit_last = 0;
};

struct MlmcEstimate {
  double value = 0.0;
  std::vector<LevelStats> levels;
  double eps = 0.0;
  double total_cost = 0.0;
  double std_error = 0.0;
  std::optional<RateEstimates> rates;
  /// False when the run stopped without passing the bias test (fixed-level
  /// runs, or the partial result inside BiasTargetUnreachable).
  bool bias_converged = false;
  /// Importance-sampling parameter used on each level; empty for plain runs.
  std::vector<Vector> level_thetas;
  /// v_l(0) per level when an importance-sampling run was asked for a
  /// baseline.
  std::vector<double> baseline_variance;
  std::vector<std::string> warnings;
};

class BiasTargetUnreachable : public ConvergenceError {
 public:
  BiasTargetUnreachable(const std::string& what, MlmcEstimate partial)
      : ConvergenceError(what), partial_(std::move(partial)) {}
  const MlmcEstimate& partial() const noexcept { return partial_; }

 private:
  MlmcEstimate partial_;
};

struct RunOptions {
  std::uint64_t pilot_samples = 10000;
  int initial_levels = 3;
  /// When set, run exactly this many levels and skip the bias test.
  std::optional<int> fixed_levels;
  Execution exec;

  void validate() const;
};

/// Adds n_new fresh samples of level `level` to `stats`.
using LevelExtender =
    std::function<void(int level, std::uint64_t n_new, LevelStats& stats)>;

/// Accumulates samples with replicate indices [first, first + n) into
/// `stats`. `block` fills a zeroed partial for one contiguous sub-range;
/// partials are merged in index order.
void accumulate_blocks(
    std::uint64_t first, std::uint64_t n, const Execution& exec,
    const std::function<void(std::uint64_t begin, std::uint64_t end, LevelStats& partial)>& block,
    LevelStats& stats);

/// Draws n_new coupled samples of level `level` with replicate indices
/// continuing from existing.count and adds their corrections.
LevelStats accumulate_level(const SdeModel& model, const Payoff& payoff,
                            const MlmcConfig& cfg, std::span<const double> theta, int level,
                            std::uint64_t n_new, const LevelStats& existing,
                            const Execution& exec = {});

/// N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_m sqrt(V_m C_m)).
std::vector<std::uint64_t> allocate_samples(std::span<const LevelStats> levels, double eps);

/// Richardson-style check that the remaining bias is below eps / sqrt(2).
bool bias_converged(std::span<const LevelStats> levels, double eps, double alpha);

/// Rates fitted over every level but the first.
RateEstimates fit_rates(std::span<const LevelStats> levels);

/// Generic driver over levels [first_level, max_level].
MlmcEstimate run_multilevel(int first_level, int max_level, double eps,
                            const RunOptions& options, const LevelExtender& extend);

MlmcEstimate run_mlmc(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                      double eps, const RunOptions& options = {});

/// Driver with a per-level theta supplied by `theta_for(level)`.
MlmcEstimate run_mlmc_with_thetas(const SdeModel& model, const Payoff& payoff,
                                  const MlmcConfig& cfg, double eps, const RunOptions& options,
                                  const std::function<Vector(int level)>& theta_for);

}  // namespace mlmc
