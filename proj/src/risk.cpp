#include "mlmc/risk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mlmc {

namespace {

constexpr std::uint64_t kVarSeedSalt = 0x7661;
constexpr std::uint64_t kCvarSeedSalt = 0xc7a7;
constexpr double kZ95 = 1.959963984540054;

double apply(InnerFunctional f, double x) {
  if (f == InnerFunctional::heaviside) return x > 0.0 ? 1.0 : 0.0;
  return std::max(x, 0.0);
}

struct Moments {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  double sd() const { return n > 1 ? std::sqrt(std::max(0.0, m2 / static_cast<double>(n - 1))) : 0.0; }
};

/// One scenario's inner samples, drawn lazily from a single stream. Moments
/// of every prefix length that was asked for are kept, so prefixes can be
/// revisited in any order once reached.
class InnerPath {
 public:
  InnerPath(const RiskProblem& problem, double y, const StreamKey& key)
      : problem_(problem), y_(y), rng_(key) {}

  Moments at(std::uint64_t n) {
    for (const Moments& m : snapshots_) {
      if (m.n == n) return m;
    }
    if (n < running_.n) throw StateError("inner prefix requested after it was passed");
    while (running_.n < n) {
      const double x = problem_.inner(y_, rng_);
      ++running_.n;
      const double delta = x - running_.mean;
      running_.mean += delta / static_cast<double>(running_.n);
      running_.m2 += delta * (x - running_.mean);
    }
    snapshots_.push_back(running_);
    return running_;
  }

  std::uint64_t drawn() const { return running_.n; }

 private:
  const RiskProblem& problem_;
  double y_;
  RandomStream rng_;
  Moments running_;
  std::vector<Moments> snapshots_;
};

/// Doubling loop of the adaptive rule on `level`; returns the final count.
std::uint64_t adaptive_count(InnerPath& path, int level, double threshold,
                             const AdaptiveConfig& cfg, double eps) {
  const std::uint64_t hi = cfg.n0_inner << (2 * level);
  std::uint64_t n = cfg.n0_inner;
  for (;;) {
    const Moments m = path.at(n);
    const std::uint64_t need = adaptive_required_samples(level, m.mean - threshold, m.sd(), cfg, eps);
    if (n >= need || n >= hi) return n;
    n = std::min(2 * n, hi);
  }
}

RiskEstimate to_risk(const MlmcEstimate& est, InnerFunctional functional, int portfolio_size) {
  RiskEstimate r;
  r.raw_value = est.value;
  r.eta = functional == InnerFunctional::heaviside ? std::clamp(est.value, 0.0, 1.0)
                                                   : std::max(est.value, 0.0);
  r.std_error = est.std_error;
  r.levels = est.levels;
  r.total_cost = est.total_cost;
  r.total_inner_samples = est.total_cost / portfolio_size;
  r.rates = est.rates;
  if (est.rates && std::isfinite(est.rates->beta)) r.variance_slope = -est.rates->beta;
  r.bias_converged = est.bias_converged;
  r.warnings = est.warnings;
  return r;
}

double empirical_quantile(const std::vector<double>& sorted, double p) {
  if (p <= 0.0) return sorted.front();
  if (p >= 1.0) return sorted.back();
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const std::size_t i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  if (i + 1 >= sorted.size()) return sorted.back();
  return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

}  // namespace

void RiskProblem::validate() const {
  if (!outer || !inner) throw InvalidArgument("risk problem needs outer and inner samplers");
  if (portfolio_size < 1) throw InvalidArgument("portfolio_size must be positive");
  if (!std::isfinite(threshold) && threshold != -std::numeric_limits<double>::infinity() &&
      threshold != std::numeric_limits<double>::infinity()) {
    throw InvalidArgument("threshold must not be NaN");
  }
}

RiskProblem make_gaussian_problem(double threshold, int portfolio_size) {
  if (portfolio_size < 1) throw InvalidArgument("portfolio_size must be positive");
  RiskProblem p;
  p.outer = [](RandomStream& rng) { return rng.normal(); };
  const int k = portfolio_size;
  p.inner = [k](double y, RandomStream& rng) {
    const double xi = rng.normal();
    double total = 0.0;
    for (int i = 0; i < k; ++i) total += y + xi;
    return total / k;
  };
  p.threshold = threshold;
  p.portfolio_size = portfolio_size;
  RiskOracle o;
  o.cond_mean = [](double y) { return y; };
  o.cond_sd = [](double) { return 1.0; };
  o.eta = [](double l) { return 0.5 * std::erfc(l / std::sqrt(2.0)); };
  p.oracle = o;
  p.label = "gaussian";
  return p;
}

InnerMean inner_mean(const RiskProblem& problem, double y, std::uint64_t n, const StreamKey& key) {
  if (n < 2) throw InvalidArgument("inner_mean needs n >= 2");
  InnerPath path(problem, y, key);
  const Moments m = path.at(n);
  return {m.mean, m.sd()};
}

void AdaptiveConfig::validate() const {
  if (!(confidence_const > 0.0)) throw InvalidArgument("adaptive.C must be positive");
  if (!(moment_q > 2.0)) throw InvalidArgument("adaptive.q must exceed 2");
  if (!(eps_cap_const > 0.0)) throw InvalidArgument("adaptive.c_N must be positive");
  if (n0_inner < 2) throw InvalidArgument("adaptive.N0 must be at least 2");
  const double upper = perfect ? 2.0 - 2.0 / moment_q
                               : 2.0 - (std::sqrt(4.0 * moment_q + 1.0) - 1.0) / moment_q;
  if (!(exponent_r > 1.0 && exponent_r < upper)) {
    throw InvalidArgument("adaptive.r must lie in (1, " + std::to_string(upper) + ")");
  }
}

std::uint64_t adaptive_required_samples(int level, double mu, double sigma,
                                        const AdaptiveConfig& cfg, double eps) {
  if (level < 0 || level > 24) throw InvalidArgument("adaptive level out of range");
  const double n0 = static_cast<double>(cfg.n0_inner);
  const double two_l = std::ldexp(1.0, level);
  const double lo = n0 * two_l, hi = n0 * two_l * two_l;
  const double c = cfg.confidence_const;
  const double mu_abs = std::abs(mu);
  double frac;
  if (sigma <= 0.0) {
    frac = 1.0 / two_l;
  } else if (mu_abs == 0.0) {
    frac = 1.0;
  } else {
    const double ratio = std::sqrt(n0) * two_l * mu_abs / (c * sigma);
    frac = std::max(1.0 / two_l, std::min(1.0, std::pow(ratio, -cfg.exponent_r)));
  }
  const double target = std::ceil(hi * frac);
  double cap = cfg.eps_cap_const / eps;
  if (sigma > 0.0) {
    cap = mu_abs == 0.0 ? std::numeric_limits<double>::infinity()
                        : std::max(cap, c * c * sigma * sigma / (mu_abs * mu_abs));
  }
  cap = std::ceil(cap);
  const double need = std::clamp(std::min(target, cap), lo, hi);
  return static_cast<std::uint64_t>(need);
}

InnerDraw adaptive_inner(const RiskProblem& problem, double y, int level, const AdaptiveConfig& cfg,
                         double eps, const StreamKey& key, InnerFunctional functional,
                         std::optional<double> threshold) {
  if (level < 0) throw InvalidArgument("adaptive_inner: level must be >= 0");
  const double l_eta = threshold.value_or(problem.threshold);
  InnerPath path(problem, y, key);
  InnerDraw out;
  if (cfg.perfect) {
    if (!problem.oracle) throw InvalidArgument("perfect adaptive mode needs an analytic oracle");
    const double mu = problem.oracle->cond_mean(y) - l_eta;
    const double sd = problem.oracle->cond_sd(y);
    out.n_fine = adaptive_required_samples(level, mu, sd, cfg, eps);
    out.n_coarse = level > 0 ? adaptive_required_samples(level - 1, mu, sd, cfg, eps) : 0;
    const std::uint64_t first = std::min(out.n_fine, out.n_coarse == 0 ? out.n_fine : out.n_coarse);
    const double m_first = path.at(first).mean;
    const double m_fine = path.at(out.n_fine).mean;
    out.fine = apply(functional, m_fine - l_eta);
    if (level > 0) {
      const double m_coarse = out.n_coarse == first ? m_first : path.at(out.n_coarse).mean;
      out.coarse = apply(functional, m_coarse - l_eta);
    }
  } else {
    if (level > 0) {
      out.n_coarse = adaptive_count(path, level - 1, l_eta, cfg, eps);
      out.coarse = apply(functional, path.at(out.n_coarse).mean - l_eta);
    }
    out.n_fine = adaptive_count(path, level, l_eta, cfg, eps);
    out.fine = apply(functional, path.at(out.n_fine).mean - l_eta);
  }
  out.cost = static_cast<double>(path.drawn()) * problem.portfolio_size;
  return out;
}

LevelStats nested_level_stats(const RiskProblem& problem, const NestedSpec& spec, int level,
                              std::uint64_t n_new, const LevelStats& existing,
                              const Execution& exec) {
  if (n_new == 0) return existing;
  if (level < 0) throw InvalidArgument("nested level must be >= 0");
  problem.validate();
  if (spec.scheme == NestedScheme::adaptive) spec.adaptive.validate();
  if (spec.n0_inner < 2) throw InvalidArgument("n0_inner must be at least 2");
  const double l_eta = spec.threshold.value_or(problem.threshold);
  LevelStats out = existing;
  out.level = level;
  accumulate_blocks(
      existing.count, n_new, exec,
      [&](std::uint64_t begin, std::uint64_t end, LevelStats& part) {
        for (std::uint64_t m = begin; m < end; ++m) {
          RandomStream outer_rng({spec.seed, level, m, Purpose::outer});
          const double y = problem.outer(outer_rng);
          const StreamKey inner_key{spec.seed, level, m, Purpose::inner};
          if (spec.scheme == NestedScheme::adaptive) {
            const InnerDraw d = adaptive_inner(problem, y, level, spec.adaptive, spec.eps,
                                               inner_key, spec.functional, l_eta);
            part.add(d.fine - d.coarse, d.cost);
          } else {
            const std::uint64_t n_fine = spec.n0_inner << level;
            InnerPath path(problem, y, inner_key);
            double coarse = 0.0;
            if (level > 0) coarse = apply(spec.functional, path.at(n_fine / 2).mean - l_eta);
            const double fine = apply(spec.functional, path.at(n_fine).mean - l_eta);
            part.add(fine - coarse, static_cast<double>(n_fine) * problem.portfolio_size);
          }
        }
      },
      out);
  return out;
}

RiskEstimate nested_mc(const RiskProblem& problem, std::uint64_t outer, std::uint64_t inner,
                       std::uint64_t seed, const Execution& exec) {
  problem.validate();
  if (outer < 1) throw InvalidArgument("nested_mc: M must be positive");
  if (inner < 2) throw InvalidArgument("nested_mc: N must be at least 2");
  LevelStats stats;
  stats.level = 0;
  accumulate_blocks(
      0, outer, exec,
      [&](std::uint64_t begin, std::uint64_t end, LevelStats& part) {
        for (std::uint64_t m = begin; m < end; ++m) {
          RandomStream outer_rng({seed, 0, m, Purpose::outer});
          const double y = problem.outer(outer_rng);
          const InnerMean z = inner_mean(problem, y, inner, {seed, 0, m, Purpose::inner});
          part.add(z.z_hat > problem.threshold ? 1.0 : 0.0,
                   static_cast<double>(inner) * problem.portfolio_size);
        }
      },
      stats);
  RiskEstimate r;
  r.raw_value = stats.mean();
  r.eta = std::clamp(r.raw_value, 0.0, 1.0);
  r.std_error = outer >= 2 ? std::sqrt(stats.variance() / static_cast<double>(outer)) : 0.0;
  r.levels = {stats};
  r.total_cost = stats.cost_total;
  r.total_inner_samples = stats.cost_total / problem.portfolio_size;
  return r;
}

RiskEstimate nested_mlmc(const RiskProblem& problem, const NestedSpec& spec, double eps,
                         const NestedOptions& options) {
  problem.validate();
  if (spec.scheme == NestedScheme::adaptive) spec.adaptive.validate();
  NestedSpec level_spec = spec;
  level_spec.eps = eps;
  auto extend = [&](int level, std::uint64_t n_new, LevelStats& stats) {
    stats = nested_level_stats(problem, level_spec, level, n_new, stats, options.run.exec);
  };
  const MlmcEstimate est = run_multilevel(0, options.max_level, eps, options.run, extend);
  return to_risk(est, spec.functional, problem.portfolio_size);
}

RiskEstimate nested_mlmc_uniform(const RiskProblem& problem, double eps, std::uint64_t seed,
                                 const NestedOptions& options, std::uint64_t n0_inner) {
  NestedSpec spec;
  spec.scheme = NestedScheme::uniform;
  spec.n0_inner = n0_inner;
  spec.seed = seed;
  return nested_mlmc(problem, spec, eps, options);
}

RiskEstimate nested_mlmc_adaptive(const RiskProblem& problem, double eps,
                                  const AdaptiveConfig& cfg, std::uint64_t seed,
                                  const NestedOptions& options) {
  NestedSpec spec;
  spec.scheme = NestedScheme::adaptive;
  spec.adaptive = cfg;
  spec.n0_inner = cfg.n0_inner;
  spec.seed = seed;
  return nested_mlmc(problem, spec, eps, options);
}

VarCvarResult var_cvar(const RiskProblem& problem, double quantile, double eps,
                       const VarCvarOptions& options) {
  problem.validate();
  if (!(quantile > 0.0 && quantile < 1.0)) throw InvalidArgument("quantile must lie in (0, 1)");
  if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
  if (options.pilot_scenarios < 10 || options.pilot_inner < 2) {
    throw InvalidArgument("VaR pilot needs at least 10 scenarios and 2 inner samples");
  }
  options.adaptive.validate();

  VarCvarResult out;
  out.quantile = quantile;
  out.eps = eps;

  // Pilot scenario means give the bracket and a density estimate.
  const std::uint64_t pilot_seed = mix_seed(options.seed, kVarSeedSalt);
  std::vector<double> z(options.pilot_scenarios);
  for (std::uint64_t m = 0; m < options.pilot_scenarios; ++m) {
    RandomStream rng({pilot_seed, 0, m, Purpose::pilot});
    const double y = problem.outer(rng);
    z[m] = inner_mean(problem, y, options.pilot_inner, {pilot_seed, 1, m, Purpose::pilot}).z_hat;
  }
  std::sort(z.begin(), z.end());
  out.total_cost = static_cast<double>(options.pilot_scenarios * options.pilot_inner) * problem.portfolio_size;
  if (quantile * static_cast<double>(z.size()) < 1.0) {
    throw BracketError("quantile " + std::to_string(quantile) + " is beyond the resolution of " +
                       std::to_string(z.size()) + " pilot scenarios");
  }
  double lo = empirical_quantile(z, 1.0 - 2.0 * quantile);
  double hi = empirical_quantile(z, 1.0 - 0.5 * quantile);
  const double centre = empirical_quantile(z, 1.0 - quantile);
  const double h = 0.25 * (hi - lo);
  if (!(h > 0.0)) throw BracketError("pilot scenarios do not spread around the quantile");
  const auto near = std::count_if(z.begin(), z.end(), [&](double v) { return std::abs(v - centre) <= h; });
  out.density = static_cast<double>(near) / (static_cast<double>(z.size()) * 2.0 * h);
  if (!(out.density > 0.0)) throw BracketError("pilot density at the quantile is zero");
  // 95% half-width of each eta evaluation, mapped to loss units, is eps / 2.
  out.eta_eps = 0.5 * eps * out.density / kZ95;

  NestedSpec spec;
  spec.scheme = NestedScheme::adaptive;
  spec.adaptive = options.adaptive;
  spec.n0_inner = options.adaptive.n0_inner;
  spec.seed = options.seed;  // common random numbers across thresholds
  auto eta_at = [&](double level_l) {
    NestedSpec s = spec;
    s.threshold = level_l;
    const RiskEstimate r = nested_mlmc(problem, s, out.eta_eps, options.nested);
    out.steps.push_back({level_l, r.eta, r.std_error, r.total_cost});
    out.total_cost += r.total_cost;
    return out.steps.back();
  };

  const BisectionStep at_lo = eta_at(lo), at_hi = eta_at(hi);
  if (at_lo.eta + kZ95 * at_lo.std_error < quantile || at_hi.eta - kZ95 * at_hi.std_error > quantile) {
    throw BracketError("pilot bracket [" + std::to_string(lo) + ", " + std::to_string(hi) +
                       "] does not contain the quantile: eta = " + std::to_string(at_lo.eta) +
                       ", " + std::to_string(at_hi.eta));
  }
  out.stop_cause = "bracket_width";
  double var = 0.5 * (lo + hi);
  for (int it = 0; it < options.max_bisections; ++it) {
    if (hi - lo <= eps) {
      var = 0.5 * (lo + hi);
      out.stop_cause = "bracket_width";
      break;
    }
    const double mid = 0.5 * (lo + hi);
    const BisectionStep s = eta_at(mid);
    if (std::abs(s.eta - quantile) <= kZ95 * s.std_error) {
      var = mid;
      out.stop_cause = "confidence_interval";
      break;
    }
    if (s.eta > quantile) lo = mid; else hi = mid;
    var = 0.5 * (lo + hi);
  }
  out.var = var;
  out.bracket_lo = lo;
  out.bracket_hi = hi;

  NestedSpec tail;
  tail.scheme = NestedScheme::uniform;
  tail.functional = InnerFunctional::positive_part;
  tail.threshold = var;
  tail.n0_inner = options.adaptive.n0_inner;
  tail.seed = mix_seed(options.seed, kCvarSeedSalt);
  out.tail = nested_mlmc(problem, tail, 0.5 * eps * quantile / kZ95, options.nested);
  out.total_cost += out.tail.total_cost;
  out.cvar = var + out.tail.eta / quantile;
  out.cvar_std_error = out.tail.std_error / quantile;
  return out;
}

}  // namespace mlmc
