#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlmc/estimator.hpp"
#include "mlmc/importance.hpp"
#include "mlmc/risk.hpp"

namespace mlmc {

enum class ExperimentKind { price, price_is, price_is_adaptive, risk_eta, risk_var_cvar, rates_sweep };

const char* to_string(ExperimentKind kind);

/// Built-in model by name with a flat numeric parameter map.
///   gbm: x0, mu, sigma, T
///   correlated_gbm: dim, x0, mu, sigma, rho, T
struct ModelSpec {
  std::string name = "gbm";
  std::map<std::string, double> params;
};

/// call / put / basket_call: strike; digital: strike, payout; constant: value.
struct PayoffSpec {
  std::string name = "call";
  std::map<std::string, double> params;
};

struct MlmcSettings {
  int refine_factor = 2;
  int base_steps = 1;
  int max_level = 12;
  std::uint64_t pilot_samples = 10000;
  int initial_levels = 3;
  std::optional<int> fixed_levels;
  int threads = 1;
};

struct IsSettings {
  ThetaMethod method = ThetaMethod::saa;
  std::uint64_t pilot_samples = 10000;
  /// Levels that get their own theta; deeper levels reuse the last one.
  int schedule_levels = 4;
  RmConfig rm;
  /// Held-out samples per level for the v_l(0) baseline; 0 disables it.
  std::uint64_t baseline_samples = 0;
};

enum class RiskScheme { uniform, adaptive, nested_mc };

struct RiskSettings {
  std::string problem = "gaussian";
  double threshold = 1.0;
  int portfolio_size = 1;
  RiskScheme scheme = RiskScheme::adaptive;
  AdaptiveConfig adaptive;
  /// Inner samples on level 0 of the uniform scheme.
  std::uint64_t n0_inner = 16;
  double quantile = 0.05;
  int max_level = 10;
  /// Plain nested MC at accuracy eps: M = ceil(outer_const / eps^2),
  /// N = ceil(inner_const / eps).
  double outer_const = 1.0;
  double inner_const = 1.0;
  std::uint64_t pilot_scenarios = 10000;
  std::uint64_t pilot_inner = 64;
};

/// Fixed-sample level sweep for rate fitting.
struct RatesSettings {
  std::string target = "price";  ///< "price" or "risk"
  std::uint64_t samples_per_level = 100000;
  int first_level = 1;
  int last_level = 7;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::price;
  ModelSpec model;
  PayoffSpec payoff;
  std::vector<double> eps{0.01};
  MlmcSettings mlmc;
  IsSettings is;
  RiskSettings risk;
  RatesSettings rates;
  std::uint64_t seed = 0;
  std::string output_dir = "mlmc_out";
  int replicates = 1;

  /// Checks every field against the types it populates; throws ConfigError
  /// naming the offending field path.
  void validate() const;
};

/// Parses a JSON document. Missing fields keep their defaults, unknown
/// fields are rejected. The result is validated.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON text: every field present, keys sorted, fixed indentation.
std::string canonical_json(const ExperimentConfig& config);

/// FNV-1a 64 of the canonical JSON, as 16 hex digits. The worker count and
/// output directory are left out since they never change results.
std::string config_hash(const ExperimentConfig& config);

SdeModel build_model(const ModelSpec& spec);
Payoff build_payoff(const PayoffSpec& spec);
RiskProblem build_risk_problem(const RiskSettings& risk);

/// Closed-form value of E[G(X_T)] when the model/payoff pair has one.
std::optional<double> price_oracle(const ModelSpec& model, const PayoffSpec& payoff);

struct LevelRow {
  int level = 0;
  std::uint64_t samples = 0;
  double mean = 0.0;
  double variance = 0.0;
  double cost = 0.0;  ///< cost per sample
  double kurtosis = 0.0;
  std::optional<double> theta_norm;
};

struct VarCvarSummary {
  double quantile = 0.0;
  double var = 0.0;
  double cvar = 0.0;
  double cvar_std_error = 0.0;
  std::string stop_cause;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  int bisection_steps = 0;
  std::optional<double> var_oracle;
  std::optional<double> cvar_oracle;
};

/// One estimator run: one replicate at one eps.
struct ReportRecord {
  ExperimentKind kind = ExperimentKind::price;
  int replicate = 0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string started_at;
  std::string finished_at;
  double eps = 0.0;
  double estimate = 0.0;
  double std_error = 0.0;
  double total_cost = 0.0;
  std::optional<RateEstimates> rates;
  std::optional<double> variance_slope;
  bool bias_converged = false;
  std::vector<LevelRow> levels;
  std::optional<double> oracle;
  std::optional<VarCvarSummary> var_cvar;
  std::vector<std::string> warnings;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<ReportRecord> records;
};

/// Seed of replicate r: the configured seed for r = 0, a mixed seed after.
std::uint64_t replicate_seed(std::uint64_t seed, int replicate);

/// Runs every replicate at every eps. Estimator failures are rethrown with
/// the replicate and eps in the message, keeping their type.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// JSON of one record. With `with_timestamps` false the two wall-clock
/// fields are left out, which makes the text a pure function of the config.
std::string record_json(const ReportRecord& record, bool with_timestamps = true);

/// Writes report_<r>.json per replicate, levels.csv and summary.csv.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

struct SweepResult {
  double slope = 0.0;
  double intercept = 0.0;
  std::vector<double> eps;
  std::vector<double> mean_costs;  ///< replicate-averaged total cost per eps
};

/// Least-squares fit of log cost against log eps. Needs at least three
/// points whose eps span a factor of four or more.
SweepResult fit_cost_slope(const std::vector<double>& eps, const std::vector<double>& costs);

/// Runs the experiment over its eps list and fits the cost slope.
SweepResult sweep_and_fit(const ExperimentConfig& config, ExperimentResult* runs = nullptr);

void write_sweep(const SweepResult& sweep, const std::filesystem::path& dir);

}  // namespace mlmc
