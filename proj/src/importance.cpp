#include "mlmc/importance.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "mlmc/paths.hpp"

namespace mlmc {

namespace {

constexpr int kMaxHalvings = 60;
constexpr std::size_t kMaxTracePoints = 2000;
constexpr std::uint64_t kRmSeedSalt = 0x524d;
constexpr std::uint64_t kBaselineSeedSalt = 0xba5e;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void project(Vector& theta, double radius) {
  const double n = norm(theta);
  if (n > radius) {
    for (double& t : theta) t *= radius / n;
  }
}

double squared_correction(double fine, std::optional<double> coarse, double normalization) {
  const double s = fine - coarse.value_or(0.0);
  return normalization * s * s;
}

}  // namespace

const char* to_string(ThetaMethod method) {
  switch (method) {
    case ThetaMethod::zero: return "zero";
    case ThetaMethod::saa: return "saa";
    case ThetaMethod::robbins_monro: return "robbins_monro";
  }
  return "unknown";
}

ThetaSchedule ThetaSchedule::zero(std::size_t dim_noise, int levels) {
  ThetaSchedule s;
  s.thetas.assign(static_cast<std::size_t>(std::max(levels, 1)), Vector(dim_noise, 0.0));
  s.method = ThetaMethod::zero;
  return s;
}

const Vector& ThetaSchedule::for_level(int level) const {
  if (thetas.empty()) throw InvalidArgument("theta schedule is empty");
  if (level < 1) throw InvalidArgument("theta schedule: level must be >= 1");
  const std::size_t i = std::min<std::size_t>(level - 1, thetas.size() - 1);
  return thetas[i];
}

// SAA -------------------------------------------------------------------------

SaaProblem::SaaProblem(int level, double horizon, std::size_t dim_noise, double normalization)
    : level_(level), horizon_(horizon), dim_(dim_noise), normalization_(normalization) {
  if (dim_noise == 0) throw InvalidArgument("SaaProblem: dimension must be positive");
  if (!(horizon > 0.0) || !(normalization > 0.0)) {
    throw InvalidArgument("SaaProblem: horizon and normalization must be positive");
  }
}

void SaaProblem::add(double fine, std::optional<double> coarse, std::span<const double> w_T) {
  if (w_T.size() != dim_) throw InvalidArgument("SaaProblem: w_T has the wrong length");
  ++total_;
  const double s2 = squared_correction(fine, coarse, normalization_);
  if (s2 == 0.0) return;
  s2_.push_back(s2);
  w_.insert(w_.end(), w_T.begin(), w_T.end());
}

SaaProblem build_saa_problem(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                             int level, std::uint64_t n, const Execution& exec) {
  model.validate();
  cfg.validate();
  if (n == 0) throw InvalidArgument("SAA pilot size must be positive");
  const std::size_t q = model.dim_noise;
  const Vector zero(q, 0.0);
  struct Block {
    std::vector<double> fine, coarse;
    std::vector<char> has_coarse;
    std::vector<double> w;
  };
  const std::uint64_t n_blocks = (n + kSampleBlock - 1) / kSampleBlock;
  std::vector<Block> blocks(n_blocks);
  parallel_for(n_blocks, exec, [&](std::size_t b) {
    PathSimulator sim(model, cfg);
    const std::uint64_t begin = b * kSampleBlock, end = std::min(n, begin + kSampleBlock);
    for (std::uint64_t r = begin; r < end; ++r) {
      const CoupledSample& s = sim.simulate(level, zero, {cfg.seed, level, r, Purpose::optimizer});
      blocks[b].fine.push_back(payoff.eval(s.x_fine));
      blocks[b].has_coarse.push_back(s.x_coarse.has_value());
      blocks[b].coarse.push_back(s.x_coarse ? payoff.eval(*s.x_coarse) : 0.0);
      blocks[b].w.insert(blocks[b].w.end(), s.w_T.begin(), s.w_T.end());
    }
  });
  SaaProblem problem(level, model.horizon, q, cfg.is_normalization(level, model.horizon));
  for (const Block& blk : blocks) {
    for (std::size_t i = 0; i < blk.fine.size(); ++i) {
      problem.add(blk.fine[i], blk.has_coarse[i] ? std::optional(blk.coarse[i]) : std::nullopt,
                  std::span(blk.w.data() + i * q, q));
    }
  }
  return problem;
}

SaaObjective saa_objective(const SaaProblem& problem, std::span<const double> theta) {
  const std::size_t q = problem.dim();
  if (theta.size() != q) throw InvalidArgument("saa_objective: theta has the wrong length");
  if (std::any_of(theta.begin(), theta.end(), [](double t) { return !std::isfinite(t); })) {
    throw InvalidArgument("saa_objective: non-finite theta");
  }
  if (problem.informative() == 0) {
    throw DegenerateObjective("saa_objective: every pilot sample has zero payoff contribution");
  }
  const double T = problem.horizon();
  const double half_sq = 0.5 * dot(theta, theta) * T;
  SaaObjective out;
  out.gradient.assign(q, 0.0);
  out.hessian.assign(q, Vector(q, 0.0));
  Vector a(q);
  for (std::size_t k = 0; k < problem.informative(); ++k) {
    const auto w = problem.w(k);
    const double e = problem.s2(k) * std::exp(-dot(theta, w) + half_sq);
    out.value += e;
    for (std::size_t i = 0; i < q; ++i) {
      a[i] = theta[i] * T - w[i];
      out.gradient[i] += e * a[i];
    }
    for (std::size_t i = 0; i < q; ++i) {
      for (std::size_t j = 0; j < q; ++j) out.hessian[i][j] += e * a[i] * a[j];
      out.hessian[i][i] += e * T;
    }
  }
  const double inv_n = 1.0 / static_cast<double>(problem.total());
  out.value *= inv_n;
  for (std::size_t i = 0; i < q; ++i) {
    out.gradient[i] *= inv_n;
    for (std::size_t j = 0; j < q; ++j) out.hessian[i][j] *= inv_n;
  }
  return out;
}

SaaResult solve_saa(const SaaProblem& problem, double tol, int max_iter) {
  if (!(tol > 0.0)) throw InvalidArgument("solve_saa: tol must be positive");
  if (max_iter < 1) throw InvalidArgument("solve_saa: max_iter must be positive");
  const std::size_t q = problem.dim();
  SaaResult result;
  result.trace.level = problem.level();
  result.trace.informative = problem.informative();
  Vector theta(q, 0.0);
  for (int it = 0;; ++it) {
    const SaaObjective obj = saa_objective(problem, theta);
    const double gnorm = norm(obj.gradient);
    result.trace.points.push_back({static_cast<std::uint64_t>(it), norm(theta), obj.value});
    result.trace.iterations = static_cast<std::uint64_t>(it);
    result.trace.final_measure = gnorm;
    if (gnorm <= tol * obj.value) break;
    if (it >= max_iter) {
      throw SaaNotConverged("solve_saa: no convergence within " + std::to_string(max_iter) +
                                " Newton iterations",
                            theta);
    }
    Eigen::MatrixXd h(q, q);
    Eigen::VectorXd g(q);
    for (std::size_t i = 0; i < q; ++i) {
      g(i) = obj.gradient[i];
      for (std::size_t j = 0; j < q; ++j) h(i, j) = obj.hessian[i][j];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(h);
    Eigen::VectorXd d = llt.info() == Eigen::Success ? Eigen::VectorXd(llt.solve(-g))
                                                     : Eigen::VectorXd(-g);
    double t = 1.0;
    bool moved = false;
    Vector trial(q);
    for (int halving = 0; halving < kMaxHalvings; ++halving, t *= 0.5) {
      for (std::size_t i = 0; i < q; ++i) trial[i] = theta[i] + t * d(i);
      if (saa_objective(problem, trial).value < obj.value) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      result.trace.note = "objective stationary to rounding";
      break;
    }
    theta = trial;
  }
  result.theta = theta;
  result.trace.converged = true;
  return result;
}

// Robbins-Monro ---------------------------------------------------------------

void RmConfig::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw InvalidArgument("rm.radius must be positive");
  if (!(gamma0 >= 0.0) || !std::isfinite(gamma0)) throw InvalidArgument("rm.gamma0 must be >= 0");
  if (!(n0 > 0.0) || !std::isfinite(n0)) throw InvalidArgument("rm.n0 must be positive");
  if (iterations == 0) throw InvalidArgument("rm.iterations must be positive");
  if (window == 0) throw InvalidArgument("rm.window must be positive");
}

Vector rm_gradient(std::span<const double> theta, const RmObservation& obs,
                   const RmStepContext& ctx) {
  const std::size_t q = theta.size();
  if (obs.w_T.size() != q || (!obs.shift.empty() && obs.shift.size() != q)) {
    throw InvalidArgument("rm_gradient: dimension mismatch");
  }
  Vector h(q, 0.0);
  const double s2 = squared_correction(obs.fine, obs.coarse, ctx.normalization);
  if (s2 == 0.0) return h;
  const double T = ctx.horizon;
  double exponent = 0.5 * dot(theta, theta) * T;
  for (std::size_t i = 0; i < q; ++i) {
    const double phi = obs.shift.empty() ? 0.0 : obs.shift[i];
    const double w_orig = obs.w_T[i] + phi * T;  // Brownian value under the unshifted measure
    exponent += -theta[i] * w_orig - phi * obs.w_T[i] - 0.5 * phi * phi * T;
    h[i] = theta[i] * T - w_orig;
  }
  const double factor = s2 * std::exp(exponent);
  for (double& v : h) v *= factor;
  return h;
}

Vector rm_step(std::span<const double> theta_n, const RmObservation& obs, std::uint64_t n,
               const RmConfig& rmc, const RmStepContext& ctx) {
  if (!(ctx.scale > 0.0)) throw InvalidArgument("rm_step: scale must be positive");
  const Vector h = rm_gradient(theta_n, obs, ctx);
  const double gamma = rmc.gamma0 / (static_cast<double>(n) + 1.0 + rmc.n0);
  Vector next(theta_n.begin(), theta_n.end());
  for (std::size_t i = 0; i < next.size(); ++i) next[i] -= gamma * h[i] / ctx.scale;
  project(next, rmc.radius);
  return next;
}

RobbinsMonro::RobbinsMonro(const RmConfig& rmc, std::size_t dim_noise, double horizon,
                           double normalization, std::uint64_t planned_iterations)
    : rmc_(rmc),
      horizon_(horizon),
      normalization_(normalization),
      planned_(planned_iterations),
      theta_(dim_noise, 0.0),
      average_sum_(dim_noise, 0.0) {
  rmc_.validate();
}

double RobbinsMonro::normalizer() const {
  const std::size_t q = theta_.size();
  const double T = horizon_;
  const double half_sq = 0.5 * dot(theta_, theta_) * T;
  double total = 0.0;
  for (const Event& e : window_) {
    double exponent = half_sq - 0.5 * dot(e.theta, e.theta) * T;
    for (std::size_t i = 0; i < q; ++i) {
      exponent += -theta_[i] * (e.w_T[i] + e.theta[i] * T) - e.theta[i] * e.w_T[i];
    }
    total += e.s2 * std::exp(exponent);
  }
  // Iterations covered by the window. Before the first informative sample the
  // whole history counts; afterwards the span restarts with the step clock.
  std::uint64_t start = 0;
  if (window_.size() == rmc_.window) {
    start = window_.front().iteration;
  } else if (first_informative_ && *first_informative_ < n_) {
    start = *first_informative_;
  }
  const double span = static_cast<double>(n_ + 1 - start) + rmc_.n0;
  return total / span;
}

void RobbinsMonro::observe(double fine, std::optional<double> coarse,
                           std::span<const double> w_T) {
  if (w_T.size() != theta_.size()) throw InvalidArgument("RobbinsMonro: w_T has the wrong length");
  const double s2 = squared_correction(fine, coarse, normalization_);
  if (s2 > 0.0 && rmc_.gamma0 > 0.0) {
    window_.push_back({n_, s2, Vector(w_T.begin(), w_T.end()), theta_});
    if (window_.size() > rmc_.window) window_.erase(window_.begin());
    // The step clock starts at the first sample that carries information.
    const std::uint64_t k = first_informative_ ? n_ - *first_informative_ : n_ + 1;
    if (!first_informative_) first_informative_ = n_;
    const double scale = normalizer();
    RmObservation obs{fine, coarse, Vector(w_T.begin(), w_T.end()), theta_};
    const Vector next = rm_step(theta_, obs, k - 1, rmc_, {horizon_, normalization_, scale});
    Vector delta(next.size());
    for (std::size_t i = 0; i < next.size(); ++i) delta[i] = next[i] - theta_[i];
    last_step_ = norm(delta);
    theta_ = next;
    ++informative_;
    if (norm(theta_) > rmc_.radius * (1.0 + 1e-12)) {
      throw Error("Robbins-Monro iterate left the projection ball");
    }
    if (points_.size() < kMaxTracePoints) points_.push_back({n_, norm(theta_), last_step_});
  }
  if (rmc_.polyak && first_informative_ &&
      n_ >= *first_informative_ + (planned_ - std::min(planned_, *first_informative_)) / 2) {
    for (std::size_t i = 0; i < theta_.size(); ++i) average_sum_[i] += theta_[i];
    ++average_count_;
  }
  ++n_;
}

Vector RobbinsMonro::result() const {
  if (!rmc_.polyak || average_count_ == 0) return theta_;
  Vector avg = average_sum_;
  for (double& v : avg) v /= static_cast<double>(average_count_);
  return avg;
}

OptimizerTrace RobbinsMonro::trace(int level) const {
  OptimizerTrace t;
  t.level = level;
  t.iterations = n_;
  t.final_measure = last_step_;
  t.informative = informative_;
  t.converged = first_informative_.has_value();
  if (!first_informative_) t.note = "no informative sample; theta stayed at 0";
  t.points = points_;
  return t;
}

SaaResult run_robbins_monro(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                            int level, const RmConfig& rmc) {
  model.validate();
  cfg.validate();
  rmc.validate();
  const double norm_l = cfg.is_normalization(level, model.horizon);
  RobbinsMonro rm(rmc, model.dim_noise, model.horizon, norm_l, rmc.iterations);
  PathSimulator sim(model, cfg);
  const std::uint64_t seed = mix_seed(cfg.seed, kRmSeedSalt);
  if (rmc.gamma0 > 0.0) {
    for (std::uint64_t k = 0; k < rmc.iterations; ++k) {
      const Vector theta = rm.theta();
      const CoupledSample& s = sim.simulate(level, theta, {seed, level, k, Purpose::optimizer});
      const double gf = payoff.eval(s.x_fine);
      const std::optional<double> gc =
          s.x_coarse ? std::optional(payoff.eval(*s.x_coarse)) : std::nullopt;
      rm.observe(gf, gc, s.w_T);
    }
  }
  SaaResult out;
  out.theta = rm.result();
  out.trace = rm.trace(level);
  return out;
}

// Schedules -------------------------------------------------------------------

ThetaSchedule optimize_saa_schedule(const SdeModel& model, const Payoff& payoff,
                                    const MlmcConfig& cfg, int levels,
                                    const SaaScheduleOptions& options) {
  if (levels < 1 || levels > cfg.max_level) throw InvalidArgument("schedule levels out of range");
  ThetaSchedule schedule;
  schedule.method = ThetaMethod::saa;
  for (int level = 1; level <= levels; ++level) {
    const SaaProblem problem =
        build_saa_problem(model, payoff, cfg, level, options.pilot_samples, options.exec);
    if (problem.informative() == 0) {
      if (level == 1) {
        throw DegenerateObjective("SAA pilot on level 1 has no non-zero payoff sample");
      }
      schedule.thetas.push_back(schedule.thetas.back());
      OptimizerTrace t;
      t.level = level;
      t.converged = false;
      t.note = "no informative pilot sample; reused theta of level " + std::to_string(level - 1);
      schedule.diagnostics.push_back(t);
      continue;
    }
    SaaResult r = solve_saa(problem, options.tol, options.max_iter);
    schedule.thetas.push_back(r.theta);
    schedule.diagnostics.push_back(std::move(r.trace));
  }
  return schedule;
}

ThetaSchedule optimize_rm_schedule(const SdeModel& model, const Payoff& payoff,
                                   const MlmcConfig& cfg, int levels, const RmConfig& rmc) {
  if (levels < 1 || levels > cfg.max_level) throw InvalidArgument("schedule levels out of range");
  ThetaSchedule schedule;
  schedule.method = ThetaMethod::robbins_monro;
  for (int level = 1; level <= levels; ++level) {
    SaaResult r = run_robbins_monro(model, payoff, cfg, level, rmc);
    schedule.thetas.push_back(r.theta);
    schedule.diagnostics.push_back(std::move(r.trace));
  }
  return schedule;
}

// Estimators ------------------------------------------------------------------

MlmcEstimate run_is_mlmc(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                         double eps, const ThetaSchedule& schedule, const RunOptions& options,
                         std::uint64_t baseline_samples) {
  if (schedule.thetas.empty()) throw InvalidArgument("run_is_mlmc: empty theta schedule");
  for (const Vector& t : schedule.thetas) {
    if (t.size() != model.dim_noise) throw InvalidArgument("run_is_mlmc: theta has the wrong length");
  }
  std::set<int> reused;
  auto theta_for = [&](int level) {
    if (level > schedule.levels()) reused.insert(level);
    return schedule.for_level(level);
  };
  auto annotate = [&](MlmcEstimate& est) {
    for (int level : reused) {
      est.warnings.push_back("level " + std::to_string(level) + " reuses theta of level " +
                             std::to_string(schedule.levels()));
    }
  };
  MlmcEstimate est;
  try {
    est = run_mlmc_with_thetas(model, payoff, cfg, eps, options, theta_for);
  } catch (const BiasTargetUnreachable& e) {
    MlmcEstimate partial = e.partial();
    annotate(partial);
    throw BiasTargetUnreachable(e.what(), std::move(partial));
  }
  annotate(est);
  if (baseline_samples >= 2) {
    MlmcConfig held_out = cfg;
    held_out.seed = mix_seed(cfg.seed, kBaselineSeedSalt);
    const Vector zero(model.dim_noise, 0.0);
    for (const LevelStats& s : est.levels) {
      est.baseline_variance.push_back(
          accumulate_level(model, payoff, held_out, zero, s.level, baseline_samples, {}, options.exec)
              .variance());
    }
  }
  return est;
}

AdaptiveIsEstimate run_adaptive_is_mlmc(const SdeModel& model, const Payoff& payoff,
                                        const MlmcConfig& cfg, double eps, const RmConfig& rmc,
                                        const RunOptions& options) {
  rmc.validate();
  model.validate();
  cfg.validate();
  AdaptiveIsEstimate out;
  out.schedule.method = ThetaMethod::robbins_monro;
  const std::size_t q = model.dim_noise;
  if (rmc.gamma0 == 0.0) {
    // No adaptation: theta stays at its starting point 0.
    out.estimate = run_mlmc(model, payoff, cfg, eps, options);
    out.schedule.method = ThetaMethod::zero;
    out.schedule.thetas.assign(out.estimate.levels.size(), Vector(q, 0.0));
    out.estimate.level_thetas = out.schedule.thetas;
    return out;
  }

  std::map<int, Vector> frozen;
  std::map<int, OptimizerTrace> traces;
  auto extend = [&](int level, std::uint64_t n_new, LevelStats& stats) {
    if (auto it = frozen.find(level); it != frozen.end()) {
      stats = accumulate_level(model, payoff, cfg, it->second, level, n_new, stats, options.exec);
      return;
    }
    const std::uint64_t burn = std::min<std::uint64_t>(rmc.iterations, n_new / 2);
    RobbinsMonro rm(rmc, q, model.horizon, cfg.is_normalization(level, model.horizon), burn);
    std::vector<std::pair<double, double>> sequential(burn);
    {
      PathSimulator sim(model, cfg);
      for (std::uint64_t r = 0; r < burn; ++r) {
        const Vector theta = rm.theta();
        const CoupledSample& s = sim.simulate(level, theta, {cfg.seed, level, r, Purpose::estimation});
        const double w = girsanov_weight(theta, s.w_T, model.horizon);
        const double gf = payoff.eval(s.x_fine);
        const std::optional<double> gc =
            s.x_coarse ? std::optional(payoff.eval(*s.x_coarse)) : std::nullopt;
        double y = gf * w;
        if (gc) y -= *gc * w;
        sequential[r] = {y, s.cost};
        rm.observe(gf, gc, s.w_T);
      }
    }
    const Vector theta = rm.result();
    frozen[level] = theta;
    traces[level] = rm.trace(level);
    stats.level = level;
    accumulate_blocks(stats.count, n_new, options.exec,
                      [&](std::uint64_t begin, std::uint64_t end, LevelStats& part) {
                        PathSimulator sim(model, cfg);
                        for (std::uint64_t r = begin; r < end; ++r) {
                          if (r < burn) {
                            part.add(sequential[r].first, sequential[r].second);
                            continue;
                          }
                          const CoupledSample& s =
                              sim.simulate(level, theta, {cfg.seed, level, r, Purpose::estimation});
                          const double w = girsanov_weight(theta, s.w_T, model.horizon);
                          double y = payoff.eval(s.x_fine) * w;
                          if (s.x_coarse) y -= payoff.eval(*s.x_coarse) * w;
                          part.add(y, s.cost);
                        }
                      },
                      stats);
  };

  auto collect = [&](MlmcEstimate& est) {
    out.schedule.thetas.clear();
    out.schedule.diagnostics.clear();
    for (const auto& [level, theta] : frozen) {
      out.schedule.thetas.push_back(theta);
      out.schedule.diagnostics.push_back(traces[level]);
    }
    est.level_thetas = out.schedule.thetas;
  };
  try {
    out.estimate = run_multilevel(1, cfg.max_level, eps, options, extend);
  } catch (const BiasTargetUnreachable& e) {
    MlmcEstimate partial = e.partial();
    collect(partial);
    throw BiasTargetUnreachable(e.what(), std::move(partial));
  }
  collect(out.estimate);
  return out;
}

}  // namespace mlmc
