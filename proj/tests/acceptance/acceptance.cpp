// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
// criterion fails. Reference values come from closed forms in oracles.hpp.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mlmc/estimator.hpp"
#include "mlmc/experiment.hpp"
#include "mlmc/importance.hpp"
#include "mlmc/risk.hpp"
#include "oracles.hpp"

using namespace mlmc;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

const SdeModel kGbm = make_gbm(1.0, 0.05, 0.2, 1.0);

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_var(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

ExperimentConfig parse(const std::string& text) { return parse_config(text); }

// 1. RMS error of run_mlmc against Black-Scholes over 50 seeds.
Outcome oracle_pricing() {
  const double exact = oracle::bs_call(1.0, 1.0, 0.05, 0.2, 1.0);
  const Payoff call = make_call(1.0);
  Outcome out{true, ""};
  for (double eps : {0.02, 0.01, 0.005}) {
    double sq = 0.0;
    for (std::uint64_t s = 1; s <= 50; ++s) {
      MlmcConfig cfg;
      cfg.seed = s;
      const double e = run_mlmc(kGbm, call, cfg, eps).value - exact;
      sq += e * e;
    }
    const double rms = std::sqrt(sq / 50.0);
    out.pass = out.pass && rms <= 1.25 * eps;
    out.detail += "eps " + fmt("%g", eps) + " rms " + fmt("%.3e", rms) + " (limit " + fmt("%.3e", 1.25 * eps) + "); ";
  }
  return out;
}

// 2. Rates from 1e5 samples on each of levels 1..7, fitted over 2..7.
Outcome rate_fits() {
  const ExperimentConfig c = parse(R"({"experiment": "rates_sweep", "seed": 7,
      "rates": {"target": "price", "samples_per_level": 100000, "first_level": 1, "last_level": 7}})");
  const ReportRecord r = run_experiment(c).records.at(0);
  const RateEstimates& k = *r.rates;
  const bool pass = k.alpha >= 0.7 && k.alpha <= 1.3 && k.beta >= 0.7 && k.beta <= 1.3 && k.gamma >= 0.9 &&
                    k.gamma <= 1.1 && k.fit_first == 2 && k.fit_last == 7;
  return {pass, "alpha " + fmt("%.3f", k.alpha) + " beta " + fmt("%.3f", k.beta) + " gamma " +
                    fmt("%.3f", k.gamma) + " over levels " + std::to_string(k.fit_first) + "-" +
                    std::to_string(k.fit_last)};
}

// 3. Cost slopes. The MLMC pilot is kept small so the cost is set by the
// sample allocation rather than by the pilot.
Outcome complexity() {
  const ExperimentConfig mlmc = parse(R"({"experiment": "price", "seed": 11, "replicates": 8,
      "eps": [0.004, 0.002, 0.001, 0.0005], "mlmc": {"pilot_samples": 100}})");
  const ExperimentConfig nested = parse(R"({"experiment": "risk_eta", "seed": 12, "replicates": 4,
      "eps": [0.04, 0.02, 0.01], "risk": {"scheme": "nested_mc"}})");
  const double sm = sweep_and_fit(mlmc).slope;
  const double sn = sweep_and_fit(nested).slope;
  const bool pass = sm >= -2.6 && sm <= -1.8 && sn >= -3.4 && sn <= -2.7;
  return {pass, "mlmc slope " + fmt("%.3f", sm) + " in [-2.6,-1.8]; nested MC slope " + fmt("%.3f", sn) +
                    " in [-3.4,-2.7]"};
}

bool same_levels(const std::vector<LevelStats>& a, const std::vector<LevelStats>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].count != b[i].count || a[i].sum != b[i].sum || a[i].sum_sq != b[i].sum_sq ||
        a[i].cost_total != b[i].cost_total)
      return false;
  }
  return true;
}

// 4. A zero schedule must leave run_mlmc untouched, bit for bit.
Outcome is_neutrality() {
  const Payoff call = make_call(1.0);
  bool pass = true;
  int runs = 0;
  for (std::uint64_t seed : {3u, 4u}) {
    MlmcConfig cfg;
    cfg.seed = seed;
    RunOptions opts;
    opts.pilot_samples = 2000;
    opts.exec.threads = 1;
    const MlmcEstimate plain = run_mlmc(kGbm, call, cfg, 0.005, opts);
    for (int t : {1, 2, 8}) {
      opts.exec.threads = t;
      const MlmcEstimate is = run_is_mlmc(kGbm, call, cfg, 0.005, ThetaSchedule::zero(1, 3), opts);
      pass = pass && is.value == plain.value && is.std_error == plain.std_error &&
             is.total_cost == plain.total_cost && same_levels(plain.levels, is.levels);
      ++runs;
    }
  }
  return {pass, std::to_string(runs) + " runs compared over threads 1/2/8"};
}

MlmcConfig deep_grid(std::uint64_t seed) {
  MlmcConfig cfg;
  cfg.base_steps = 16;
  cfg.max_level = 8;
  cfg.seed = seed;
  return cfg;
}

// 5. SAA variance reduction, its gradient, and Robbins-Monro agreement.
Outcome is_variance_reduction() {
  const Payoff call = make_call(2.0);
  const SaaProblem train = build_saa_problem(kGbm, call, deep_grid(1), 1, 100000);
  const Vector theta = solve_saa(train).theta;

  const Vector zero{0.0};
  const LevelStats base = accumulate_level(kGbm, call, deep_grid(1001), zero, 1, 100000, {});
  const LevelStats shifted = accumulate_level(kGbm, call, deep_grid(1002), theta, 1, 100000, {});
  const double ratio = shifted.variance() / base.variance();

  double worst_grad = 0.0;
  for (double t : {0.0, 0.5 * theta[0], 1.5 * theta[0]}) {
    const Vector at{t};
    const double g = saa_objective(train, at).gradient[0];
    const double h = 1e-4;
    const Vector up{t + h}, down{t - h};
    const double fd = (saa_objective(train, up).value - saa_objective(train, down).value) / (2 * h);
    worst_grad = std::max(worst_grad, std::abs(g - fd) / std::abs(g));
  }

  double worst_rm = 0.0;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    const SaaResult rm = run_robbins_monro(kGbm, call, deep_grid(s), 1, RmConfig{});
    worst_rm = std::max(worst_rm, std::abs(rm.theta[0] - theta[0]));
  }
  const bool pass = ratio <= 0.5 && worst_grad <= 1e-5 && worst_rm <= 0.1;
  return {pass, "theta_saa " + fmt("%.4f", theta[0]) + "; v1 ratio " + fmt("%.4f", ratio) +
                    " (<= 0.5); gradient rel err " + fmt("%.2e", worst_grad) + " (<= 1e-5); max |rm - saa| " +
                    fmt("%.4f", worst_rm) + " over 5 seeds (<= 0.1)"};
}

// 6. Adaptive IS against plain MLMC on the same fixed hierarchy, independent
// seeds for the two estimators.
Outcome adaptive_unbiased() {
  const Payoff call = make_call(2.0);
  RunOptions opts;
  opts.pilot_samples = 2000;
  opts.fixed_levels = 3;
  const double eps = 2e-5;
  std::vector<double> plain, adaptive;
  for (std::uint64_t s = 1; s <= 50; ++s) {
    plain.push_back(run_mlmc(kGbm, call, deep_grid(s), eps, opts).value);
    adaptive.push_back(run_adaptive_is_mlmc(kGbm, call, deep_grid(1000 + s), eps, RmConfig{}, opts).estimate.value);
  }
  const double se = std::sqrt(sample_var(plain) / 50.0 + sample_var(adaptive) / 50.0);
  const double diff = mean_of(adaptive) - mean_of(plain);
  return {std::abs(diff) <= 3.0 * se, "adaptive mean " + fmt("%.6e", mean_of(adaptive)) + " plain mean " +
                                          fmt("%.6e", mean_of(plain)) + " diff " + fmt("%.2e", diff) +
                                          " (3 SE " + fmt("%.2e", 3 * se) + ")"};
}

// 7. log2 variance slopes of the uniform and adaptive nested schemes.
Outcome nested_rates() {
  auto slope = [](const char* scheme) {
    ExperimentConfig c = parse(R"({"experiment": "rates_sweep", "seed": 21, "eps": [0.01],
        "rates": {"target": "risk", "samples_per_level": 50000, "first_level": 0, "last_level": 6}})");
    c.risk.scheme = std::string(scheme) == "uniform" ? RiskScheme::uniform : RiskScheme::adaptive;
    return *run_experiment(c).records.at(0).variance_slope;
  };
  const double su = slope("uniform");
  const double sa = slope("adaptive");
  const bool pass = su >= -0.7 && su <= -0.3 && sa <= -0.8 && sa <= su - 0.25;
  return {pass, "uniform " + fmt("%.3f", su) + " in [-0.7,-0.3]; adaptive " + fmt("%.3f", sa) +
                    " (<= -0.8 and <= uniform - 0.25)"};
}

// 8. eta at L = 0, 1 and VaR / CVaR at a = 0.05.
Outcome risk_oracles() {
  Outcome out{true, ""};
  for (double L : {0.0, 1.0}) {
    ExperimentConfig c = parse(R"({"experiment": "risk_eta", "seed": 31, "eps": [0.005]})");
    c.risk.threshold = L;
    const ReportRecord r = run_experiment(c).records.at(0);
    const double exact = oracle::norm_cdf(-L);
    const bool ok = std::abs(r.estimate - exact) <= 3.0 * r.std_error;
    out.pass = out.pass && ok;
    out.detail += "eta(" + fmt("%g", L) + ") " + fmt("%.5f", r.estimate) + " vs " + fmt("%.6f", exact) + " 3SE " +
                  fmt("%.4f", 3 * r.std_error) + "; ";
  }
  const ExperimentConfig c = parse(R"({"experiment": "risk_var_cvar", "seed": 32, "eps": [0.02],
      "risk": {"threshold": 0, "quantile": 0.05}})");
  const VarCvarSummary v = *run_experiment(c).records.at(0).var_cvar;
  const double var_exact = oracle::norm_quantile(0.95);
  const double cvar_exact = oracle::norm_pdf(var_exact) / 0.05;
  const bool ok = std::abs(v.var - var_exact) <= 0.02 && std::abs(v.cvar - cvar_exact) <= 0.02;
  out.pass = out.pass && ok;
  out.detail += "VaR " + fmt("%.4f", v.var) + " vs " + fmt("%.4f", var_exact) + ", CVaR " + fmt("%.4f", v.cvar) +
                " vs " + fmt("%.4f", cvar_exact) + " (tol 0.02)";
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Every record without timestamps plus the two CSV files.
std::string fingerprint(ExperimentConfig c, int threads) {
  c.mlmc.threads = threads;
  const ExperimentResult res = run_experiment(c);
  std::string all;
  for (const ReportRecord& r : res.records) all += record_json(r, false);
  const auto dir = std::filesystem::temp_directory_path() / ("mlmc_accept_" + std::to_string(threads));
  std::filesystem::remove_all(dir);
  write_outputs(res, dir);
  all += slurp(dir / "levels.csv") + slurp(dir / "summary.csv");
  std::filesystem::remove_all(dir);
  return all;
}

// 9. Reports are identical across worker counts for every experiment kind.
Outcome determinism() {
  const std::vector<std::pair<std::string, std::string>> configs = {
      {"price", R"({"experiment": "price", "eps": [0.01, 0.005], "replicates": 2, "mlmc": {"pilot_samples": 1000}})"},
      {"price_is", R"({"experiment": "price_is", "payoff": {"name": "call", "params": {"strike": 1.5}}, "eps": [0.002],
          "mlmc": {"base_steps": 4, "pilot_samples": 2000},
          "is": {"pilot_samples": 5000, "schedule_levels": 2, "baseline_samples": 2000}})"},
      {"price_is_rm", R"({"experiment": "price_is", "payoff": {"name": "call", "params": {"strike": 1.5}}, "eps": [0.002],
          "mlmc": {"base_steps": 4, "pilot_samples": 2000},
          "is": {"method": "robbins_monro", "schedule_levels": 2, "rm": {"iterations": 2000}}})"},
      {"price_is_adaptive", R"({"experiment": "price_is_adaptive", "payoff": {"name": "call", "params": {"strike": 1.5}},
          "eps": [0.002], "mlmc": {"base_steps": 4, "pilot_samples": 2000}})"},
      {"risk_eta uniform", R"({"experiment": "risk_eta", "eps": [0.02], "risk": {"scheme": "uniform"},
          "mlmc": {"pilot_samples": 1000}})"},
      {"risk_eta adaptive", R"({"experiment": "risk_eta", "eps": [0.02], "mlmc": {"pilot_samples": 1000}})"},
      {"risk_eta nested_mc", R"({"experiment": "risk_eta", "eps": [0.05], "risk": {"scheme": "nested_mc"}})"},
      {"risk_var_cvar", R"({"experiment": "risk_var_cvar", "eps": [0.1],
          "risk": {"threshold": 0, "pilot_scenarios": 4000}})"},
      {"rates_sweep price", R"({"experiment": "rates_sweep",
          "rates": {"samples_per_level": 5000, "last_level": 5}})"},
      {"rates_sweep risk", R"({"experiment": "rates_sweep",
          "rates": {"target": "risk", "samples_per_level": 2000, "first_level": 0, "last_level": 4}})"},
  };
  Outcome out{true, ""};
  for (const auto& [name, text] : configs) {
    ExperimentConfig c = parse(text);
    c.seed = 5;
    const std::string one = fingerprint(c, 1);
    const bool ok = fingerprint(c, 2) == one && fingerprint(c, 8) == one;
    out.pass = out.pass && ok;
    if (!ok) out.detail += name + " differs; ";
  }
  if (out.pass) out.detail = std::to_string(configs.size()) + " experiments identical over threads 1/2/8";
  return out;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"oracle pricing", oracle_pricing},
      {"rate fits", rate_fits},
      {"complexity slopes", complexity},
      {"IS neutrality", is_neutrality},
      {"IS variance reduction", is_variance_reduction},
      {"adaptive IS unbiasedness", adaptive_unbiased},
      {"nested variance rates", nested_rates},
      {"risk oracles", risk_oracles},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("%s %zu %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
