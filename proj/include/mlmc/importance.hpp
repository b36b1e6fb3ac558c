#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlmc/error.hpp"
#include "mlmc/estimator.hpp"
#include "mlmc/model.hpp"

namespace mlmc {

enum class ThetaMethod { zero, saa, robbins_monro };

const char* to_string(ThetaMethod method);

struct TracePoint {
  std::uint64_t iteration = 0;
  double theta_norm = 0.0;
  /// Objective value (SAA) or length of the accepted step (Robbins-Monro).
  double value = 0.0;
};

struct OptimizerTrace {
  int level = 0;
  std::uint64_t iterations = 0;
  /// Final |grad V| for SAA; final step length for Robbins-Monro.
  double final_measure = 0.0;
  /// Samples with a non-zero payoff contribution.
  std::uint64_t informative = 0;
  bool converged = true;
  std::string note;
  std::vector<TracePoint> points;
};

/// Per-level drift shifts theta_l, index 0 holding level 1.
struct ThetaSchedule {
  std::vector<Vector> thetas;
  ThetaMethod method = ThetaMethod::zero;
  std::vector<OptimizerTrace> diagnostics;

  static ThetaSchedule zero(std::size_t dim_noise, int levels);

  /// theta for `level`; levels past the end reuse the deepest entry.
  const Vector& for_level(int level) const;
  int levels() const { return static_cast<int>(thetas.size()); }
};

/// Fixed pilot sample defining the sample-average objective of one level.
/// Only samples with a non-zero correction are stored; `total` counts all.
class SaaProblem {
 public:
  SaaProblem(int level, double horizon, std::size_t dim_noise, double normalization);

  /// Adds one pilot sample given unweighted payoffs G(fine), G(coarse).
  void add(double fine, std::optional<double> coarse, std::span<const double> w_T);

  int level() const { return level_; }
  double horizon() const { return horizon_; }
  double normalization() const { return normalization_; }
  std::size_t dim() const { return dim_; }
  std::uint64_t total() const { return total_; }
  std::uint64_t informative() const { return s2_.size(); }
  double s2(std::size_t k) const { return s2_[k]; }
  std::span<const double> w(std::size_t k) const { return {w_.data() + k * dim_, dim_}; }

 private:
  int level_;
  double horizon_;
  std::size_t dim_;
  double normalization_;
  std::uint64_t total_ = 0;
  std::vector<double> s2_;
  std::vector<double> w_;
};

/// Draws `n` optimizer-purpose pilot samples of `level` under theta = 0.
SaaProblem build_saa_problem(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                             int level, std::uint64_t n, const Execution& exec = {});

struct SaaObjective {
  double value = 0.0;
  Vector gradient;
  std::vector<Vector> hessian;
};

/// V(theta) = (1/N) sum_k s_k^2 exp(-<theta, w_k> + |theta|^2 T / 2) with its
/// exact gradient and Hessian.
SaaObjective saa_objective(const SaaProblem& problem, std::span<const double> theta);

struct SaaResult {
  Vector theta;
  OptimizerTrace trace;
};

class SaaNotConverged : public ConvergenceError {
 public:
  SaaNotConverged(const std::string& what, Vector last)
      : ConvergenceError(what), last_(std::move(last)) {}
  const Vector& last_iterate() const noexcept { return last_; }

 private:
  Vector last_;
};

/// Damped Newton from theta = 0. Stops when |grad V| <= tol * V (the
/// objective's scale is arbitrary, so the test is relative).
SaaResult solve_saa(const SaaProblem& problem, double tol = 1e-6, int max_iter = 50);

struct RmConfig {
  double radius = 5.0;
  double gamma0 = 1.0;
  double n0 = 100.0;
  std::uint64_t iterations = 10000;
  /// Average the iterates over the second half instead of taking the last.
  bool polyak = false;
  /// Informative samples kept for the step normalizer.
  std::size_t window = 512;

  void validate() const;
};

/// One Robbins-Monro observation: unweighted payoffs of a coupled sample
/// drawn with drift shift `shift` (empty means none).
struct RmObservation {
  double fine = 0.0;
  std::optional<double> coarse;
  Vector w_T;
  Vector shift;
};

struct RmStepContext {
  double horizon = 1.0;
  double normalization = 1.0;
  /// Positive divisor applied to H before the step.
  double scale = 1.0;
};

/// Gradient sample H(theta, obs): for an unshifted sample
/// (theta T - w_T) s^2 exp(-<theta, w_T> + |theta|^2 T / 2); a shifted sample
/// is reweighted back to the original measure.
Vector rm_gradient(std::span<const double> theta, const RmObservation& obs,
                   const RmStepContext& ctx);

/// theta_{n+1} = Proj_R[theta_n - gamma_{n+1} H / scale] with
/// gamma_{n+1} = gamma0 / (n + 1 + n0).
Vector rm_step(std::span<const double> theta_n, const RmObservation& obs, std::uint64_t n,
               const RmConfig& rmc, const RmStepContext& ctx);

/// Stateful projected recursion. Each observation must have been drawn
/// under the current iterate.
class RobbinsMonro {
 public:
  RobbinsMonro(const RmConfig& rmc, std::size_t dim_noise, double horizon, double normalization,
               std::uint64_t planned_iterations);

  const Vector& theta() const { return theta_; }
  void observe(double fine, std::optional<double> coarse, std::span<const double> w_T);
  /// Last iterate, or the Polyak average when configured.
  Vector result() const;
  OptimizerTrace trace(int level) const;

 private:
  struct Event {
    std::uint64_t iteration;
    double s2;
    Vector w_T;
    Vector theta;
  };

  double normalizer() const;

  RmConfig rmc_;
  double horizon_;
  double normalization_;
  std::uint64_t planned_;
  Vector theta_;
  std::uint64_t n_ = 0;
  std::optional<std::uint64_t> first_informative_;
  std::uint64_t informative_ = 0;
  std::vector<Event> window_;
  Vector average_sum_;
  std::uint64_t average_count_ = 0;
  double last_step_ = 0.0;
  std::vector<TracePoint> points_;
};

/// Runs rmc.iterations steps of the recursion on `level`, sampling each
/// step under the current iterate with optimizer-purpose streams.
SaaResult run_robbins_monro(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                            int level, const RmConfig& rmc);

struct SaaScheduleOptions {
  std::uint64_t pilot_samples = 10000;
  double tol = 1e-6;
  int max_iter = 50;
  Execution exec;
};

/// SAA theta for levels 1..levels. A level whose pilot has no informative
/// sample reuses the previous level's theta (noted in its trace); on level 1
/// that is a DegenerateObjective error.
ThetaSchedule optimize_saa_schedule(const SdeModel& model, const Payoff& payoff,
                                    const MlmcConfig& cfg, int levels,
                                    const SaaScheduleOptions& options = {});

/// Robbins-Monro theta for levels 1..levels.
ThetaSchedule optimize_rm_schedule(const SdeModel& model, const Payoff& payoff,
                                   const MlmcConfig& cfg, int levels, const RmConfig& rmc);

/// MLMC with each level reweighted by the schedule's theta. When
/// `baseline_samples` >= 2, v_l(0) is measured on that many held-out samples
/// per level and returned in the estimate's `baseline_variance`.
MlmcEstimate run_is_mlmc(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                         double eps, const ThetaSchedule& schedule, const RunOptions& options = {},
                         std::uint64_t baseline_samples = 0);

struct AdaptiveIsEstimate {
  MlmcEstimate estimate;
  ThetaSchedule schedule;  ///< frozen iterate per level
};

/// Simultaneous estimation: on the first visit to a level the first
/// min(rmc.iterations, n/2) samples are drawn sequentially, sample k under
/// the iterate built from samples before it; the iterate is then frozen.
AdaptiveIsEstimate run_adaptive_is_mlmc(const SdeModel& model, const Payoff& payoff,
                                        const MlmcConfig& cfg, double eps, const RmConfig& rmc,
                                        const RunOptions& options = {});

}  // namespace mlmc
