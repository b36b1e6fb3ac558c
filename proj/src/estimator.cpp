#include "mlmc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mlmc/paths.hpp"

namespace mlmc {

namespace {

constexpr double kKurtosisWarning = 100.0;
constexpr int kMaxTopUpRounds = 50;

struct LineFit {
  double slope = std::numeric_limits<double>::quiet_NaN();
  double intercept = std::numeric_limits<double>::quiet_NaN();
};

LineFit least_squares(const std::vector<double>& x, const std::vector<double>& y) {
  LineFit fit;
  const std::size_t n = x.size();
  if (n < 2) return fit;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0) return fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

void finalize(MlmcEstimate& est) {
  est.value = 0.0;
  est.total_cost = 0.0;
  double var_sum = 0.0;
  for (const auto& s : est.levels) {
    est.value += s.mean();
    est.total_cost += s.cost_total;
    if (s.count >= 2) var_sum += s.variance() / static_cast<double>(s.count);
  }
  est.std_error = std::sqrt(var_sum);
  est.rates.reset();
  if (est.levels.size() >= 3) est.rates = fit_rates(est.levels);
  for (const auto& s : est.levels) {
    if (s.count >= 2 && s.kurtosis() > kKurtosisWarning) {
      std::ostringstream msg;
      msg << "level " << s.level << ": kurtosis " << s.kurtosis()
          << " makes the variance estimate unreliable";
      est.warnings.push_back(msg.str());
    }
  }
}

double bias_alpha(std::span<const LevelStats> levels) {
  // difference levels are all but the first
  if (levels.size() < 4) return 1.0;
  const RateEstimates r = fit_rates(levels);
  if (!std::isfinite(r.alpha)) return 1.0;
  return std::max(0.5, r.alpha);
}

}  // namespace

void RunOptions::validate() const {
  if (pilot_samples < 2) throw InvalidArgument("pilot_samples must be at least 2");
  if (initial_levels < 1) throw InvalidArgument("initial_levels must be positive");
  if (fixed_levels && *fixed_levels < 1) throw InvalidArgument("fixed_levels must be positive");
}

void accumulate_blocks(
    std::uint64_t first, std::uint64_t n, const Execution& exec,
    const std::function<void(std::uint64_t, std::uint64_t, LevelStats&)>& block,
    LevelStats& stats) {
  if (n == 0) return;
  const std::uint64_t n_blocks = (n + kSampleBlock - 1) / kSampleBlock;
  std::vector<LevelStats> partial(n_blocks);
  parallel_for(n_blocks, exec, [&](std::size_t b) {
    const std::uint64_t begin = first + b * kSampleBlock;
    const std::uint64_t end = std::min(first + n, begin + kSampleBlock);
    partial[b].level = stats.level;
    block(begin, end, partial[b]);
  });
  for (const auto& p : partial) stats += p;
}

LevelStats accumulate_level(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                            std::span<const double> theta, int level, std::uint64_t n_new,
                            const LevelStats& existing, const Execution& exec) {
  if (n_new == 0) return existing;
  if (level < 1 || level > cfg.max_level) throw InvalidArgument("accumulate_level: level out of range");
  if (theta.size() != model.dim_noise) throw InvalidArgument("accumulate_level: theta must have length q");
  LevelStats out = existing;
  out.level = level;
  const Vector th(theta.begin(), theta.end());
  const double horizon = model.horizon;
  accumulate_blocks(existing.count, n_new, exec,
                    [&](std::uint64_t begin, std::uint64_t end, LevelStats& part) {
                      PathSimulator sim(model, cfg);
                      for (std::uint64_t r = begin; r < end; ++r) {
                        const StreamKey key{cfg.seed, level, r, Purpose::estimation};
                        const CoupledSample& s = sim.simulate(level, th, key);
                        const double w = girsanov_weight(th, s.w_T, horizon);
                        double y = payoff.eval(s.x_fine) * w;
                        if (s.x_coarse) y -= payoff.eval(*s.x_coarse) * w;
                        part.add(y, s.cost);
                      }
                    },
                    out);
  return out;
}

std::vector<std::uint64_t> allocate_samples(std::span<const LevelStats> levels, double eps) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("allocate_samples: eps must be positive");
  if (levels.empty()) throw StateError("allocate_samples: no levels");
  std::vector<double> v(levels.size()), c(levels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].count < 2) throw StateError("allocate_samples: level lacks pilot statistics");
    v[i] = levels[i].variance();
    c[i] = levels[i].cost_per_sample();
    if (!(c[i] > 0.0)) throw StateError("allocate_samples: non-positive cost");
    total += std::sqrt(v[i] * c[i]);
  }
  std::vector<std::uint64_t> n(levels.size());
  const double scale = 2.0 / (eps * eps) * total;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    n[i] = static_cast<std::uint64_t>(std::ceil(scale * std::sqrt(v[i] / c[i])));
  }
  return n;
}

bool bias_converged(std::span<const LevelStats> levels, double eps, double alpha) {
  if (levels.size() < 3) return false;
  const double factor = std::pow(2.0, alpha) - 1.0;
  const std::size_t last = levels.size() - 1;
  double worst = 0.0;
  for (std::size_t i = last - 1; i <= last; ++i) {
    const double decay = std::pow(2.0, alpha * static_cast<double>(last - i));
    worst = std::max(worst, std::abs(levels[i].mean()) / (decay * factor));
  }
  return worst <= eps / std::sqrt(2.0);
}

RateEstimates fit_rates(std::span<const LevelStats> levels) {
  if (levels.size() < 3) throw StateError("fit_rates: need at least three levels");
  std::vector<double> lm, am, lv, av, lc, ac;
  for (std::size_t i = 1; i < levels.size(); ++i) {
    const LevelStats& s = levels[i];
    if (s.count < 2) throw StateError("fit_rates: level without statistics");
    const double l = s.level;
    const double m = std::abs(s.mean());
    const double v = s.variance();
    if (m > 0.0) {
      lm.push_back(l);
      am.push_back(std::log2(m));
    }
    if (v > 0.0) {
      lv.push_back(l);
      av.push_back(std::log2(v));
    }
    lc.push_back(l);
    ac.push_back(std::log2(s.cost_per_sample()));
  }
  RateEstimates r;
  r.alpha = -least_squares(lm, am).slope;
  r.beta = -least_squares(lv, av).slope;
  r.gamma = least_squares(lc, ac).slope;
  r.fit_first = levels[1].level;
  r.fit_last = levels.back().level;
  return r;
}

MlmcEstimate run_multilevel(int first_level, int max_level, double eps, const RunOptions& options,
                            const LevelExtender& extend) {
  if (!(eps > 0.0) || !std::isfinite(eps)) throw InvalidArgument("eps must be positive and finite");
  options.validate();
  const int wanted = options.fixed_levels.value_or(options.initial_levels);
  const int last_initial = first_level + wanted - 1;
  if (last_initial > max_level) {
    throw InvalidArgument("requested levels exceed max_level");
  }

  MlmcEstimate est;
  est.eps = eps;
  auto add_level = [&](int level) {
    LevelStats s;
    s.level = level;
    extend(level, options.pilot_samples, s);
    est.levels.push_back(s);
  };
  for (int l = first_level; l <= last_initial; ++l) add_level(l);

  for (;;) {
    for (int round = 0; round < kMaxTopUpRounds; ++round) {
      const auto target = allocate_samples(est.levels, eps);
      bool grew = false;
      for (std::size_t i = 0; i < est.levels.size(); ++i) {
        if (target[i] > est.levels[i].count) {
          extend(est.levels[i].level, target[i] - est.levels[i].count, est.levels[i]);
          grew = true;
        }
      }
      if (!grew) break;
    }
    if (options.fixed_levels) break;
    if (bias_converged(est.levels, eps, bias_alpha(est.levels))) {
      est.bias_converged = true;
      break;
    }
    const int next = est.levels.back().level + 1;
    if (next > max_level) {
      finalize(est);
      throw BiasTargetUnreachable("bias target unreachable: max_level " +
                                      std::to_string(max_level) + " reached",
                                  std::move(est));
    }
    add_level(next);
  }
  finalize(est);
  return est;
}

MlmcEstimate run_mlmc_with_thetas(const SdeModel& model, const Payoff& payoff,
                                  const MlmcConfig& cfg, double eps, const RunOptions& options,
                                  const std::function<Vector(int)>& theta_for) {
  model.validate();
  cfg.validate();
  std::vector<Vector> used;
  auto extend = [&](int level, std::uint64_t n_new, LevelStats& stats) {
    const Vector theta = theta_for(level);
    if (used.size() < static_cast<std::size_t>(level)) used.resize(level);
    used[level - 1] = theta;
    stats = accumulate_level(model, payoff, cfg, theta, level, n_new, stats, options.exec);
  };
  try {
    MlmcEstimate est = run_multilevel(1, cfg.max_level, eps, options, extend);
    est.level_thetas = used;
    return est;
  } catch (const BiasTargetUnreachable& e) {
    MlmcEstimate partial = e.partial();
    partial.level_thetas = used;
    throw BiasTargetUnreachable(e.what(), std::move(partial));
  }
}

MlmcEstimate run_mlmc(const SdeModel& model, const Payoff& payoff, const MlmcConfig& cfg,
                      double eps, const RunOptions& options) {
  const Vector zero(model.dim_noise, 0.0);
  MlmcEstimate est =
      run_mlmc_with_thetas(model, payoff, cfg, eps, options, [&](int) { return zero; });
  est.level_thetas.clear();
  return est;
}

}  // namespace mlmc
