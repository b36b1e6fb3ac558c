#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mlmc/experiment.hpp"
#include "oracles.hpp"

using namespace mlmc;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mlmc_test_" + name);
  fs::remove_all(d);
  return d;
}

std::string field_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field_path();
  }
  return "<accepted>";
}

std::vector<std::string> record_texts(const ExperimentResult& r) {
  std::vector<std::string> out;
  for (const auto& rec : r.records) out.push_back(record_json(rec, false));
  return out;
}

}  // namespace

TEST(Config, DefaultsFillEveryField) {
  const ExperimentConfig c = parse_config("{}");
  EXPECT_EQ(c.kind, ExperimentKind::price);
  EXPECT_EQ(c.model.params.at("sigma"), 0.2);
  EXPECT_EQ(c.payoff.params.at("strike"), 1.0);
  EXPECT_EQ(c.replicates, 1);
}

TEST(Config, RoundTripIsCanonical) {
  const std::string text = R"({
    "experiment": "risk_eta",
    "replicates": 3,
    "risk": {"threshold": 0.5, "scheme": "uniform", "adaptive": {"r": 1.2}},
    "eps": [0.02, 0.01],
    "mlmc": {"fixed_levels": 4, "max_level": 8},
    "model": {"name": "correlated_gbm", "params": {"dim": 3, "rho": 0.1}},
    "payoff": {"name": "basket_call", "params": {"strike": 1.1}},
    "seed": 99
  })";
  const ExperimentConfig a = parse_config(text);
  const std::string canon = canonical_json(a);
  const ExperimentConfig b = parse_config(canon);
  EXPECT_EQ(canonical_json(b), canon);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(b.risk.adaptive.exponent_r, 1.2);
  EXPECT_EQ(*b.mlmc.fixed_levels, 4);
  EXPECT_EQ(b.model.params.at("dim"), 3.0);
}

TEST(Config, KeyOrderAndDefaultsDoNotChangeHash) {
  const ExperimentConfig a = parse_config(R"({"seed": 5, "eps": [0.01]})");
  const ExperimentConfig b = parse_config(R"({"eps": [0.01], "mlmc": {"refine_factor": 2}, "seed": 5})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  const ExperimentConfig c = parse_config(R"({"eps": [0.01], "seed": 6})");
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(config_hash(a).size(), 16u);
  ExperimentConfig d = a;
  d.mlmc.threads = 8;
  d.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(d), config_hash(a));
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_of("{not json"), "<root>");
  EXPECT_EQ(field_of(R"({"experiment": "banana"})"), "experiment");
  EXPECT_EQ(field_of(R"({"mlmc": {"pilto_samples": 5}})"), "mlmc.pilto_samples");
  EXPECT_EQ(field_of(R"({"eps": [0.01, -1]})"), "eps[1]");
  EXPECT_EQ(field_of(R"({"eps": [0.01, "x"]})"), "eps[1]");
  EXPECT_EQ(field_of(R"({"eps": []})"), "eps");
  EXPECT_EQ(field_of(R"({"model": {"params": {"T": -1}}})"), "model.params");
  EXPECT_EQ(field_of(R"({"model": {"params": {"vol": 0.2}}})"), "model.params.vol");
  EXPECT_EQ(field_of(R"({"model": {"name": "heston"}})"), "model.name");
  EXPECT_EQ(field_of(R"({"is": {"rm": {"radius": 0}}})"), "is.rm");
  EXPECT_EQ(field_of(R"({"risk": {"adaptive": {"r": 1.4}}})"), "risk.adaptive");
  EXPECT_EQ(field_of(R"({"risk": {"quantile": 1.5}})"), "risk.quantile");
  EXPECT_EQ(field_of(R"({"mlmc": {"max_level": 0}})"), "mlmc");
  EXPECT_EQ(field_of(R"({"mlmc": {"threads": 1.5}})"), "mlmc.threads");
  EXPECT_EQ(field_of(R"({"seed": -3})"), "seed");
  EXPECT_EQ(field_of(R"({"replicates": 0})"), "replicates");
  EXPECT_EQ(field_of(R"({"rates": {"target": "bonds"}})"), "rates.target");
  EXPECT_EQ(field_of(R"({"experiment": "rates_sweep", "rates": {"target": "risk"}, "risk": {"scheme": "nested_mc"}})"),
            "risk.scheme");
  EXPECT_EQ(field_of(R"({"is": {"method": "saa"}})"), "<accepted>");
}

TEST(Config, LoadMissingFileIsConfigError) {
  EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(PriceOracle, MatchesClosedForms) {
  ModelSpec m;
  m.params = {{"x0", 1.0}, {"mu", 0.05}, {"sigma", 0.2}, {"T", 1.0}};
  PayoffSpec call{"call", {{"strike", 1.1}}};
  EXPECT_NEAR(*price_oracle(m, call), oracle::bs_call(1.0, 1.1, 0.05, 0.2, 1.0), 1e-14);
  PayoffSpec put{"put", {{"strike", 1.1}}};
  EXPECT_NEAR(*price_oracle(m, call) - *price_oracle(m, put), std::exp(0.05) - 1.1, 1e-14);
  PayoffSpec digital{"digital", {{"strike", 1.1}, {"payout", 2.0}}};
  const double d2 = (std::log(std::exp(0.05) / 1.1) - 0.02) / 0.2;
  EXPECT_NEAR(*price_oracle(m, digital), 2.0 * oracle::norm_cdf(d2), 1e-14);
  EXPECT_FALSE(price_oracle({"correlated_gbm", {}}, call).has_value());
}

TEST(RunExperiment, ZeroVolatilityIsDeterministic) {
  const ExperimentConfig c = parse_config(R"({
    "experiment": "price",
    "model": {"name": "gbm", "params": {"x0": 1, "mu": 0.05, "sigma": 0, "T": 1}},
    "payoff": {"name": "call", "params": {"strike": 1}},
    "eps": [0.01], "mlmc": {"pilot_samples": 100}})");
  const ExperimentResult r = run_experiment(c);
  ASSERT_EQ(r.records.size(), 1u);
  const ReportRecord& rec = r.records[0];
  // Euler on dX = 0.05 X dt: level l gives (1 + 0.05 / n_l)^n_l, converging to e^0.05.
  EXPECT_NEAR(rec.estimate, std::exp(0.05) - 1.0, 0.01);
  for (const LevelRow& l : rec.levels) EXPECT_EQ(l.variance, 0.0);
  EXPECT_EQ(rec.std_error, 0.0);
  ASSERT_TRUE(rec.oracle.has_value());
  EXPECT_NEAR(*rec.oracle, std::exp(0.05) - 1.0, 1e-15);
}

TEST(RunExperiment, RiskEtaWithinThreeErrors) {
  const ExperimentConfig c = parse_config(R"({
    "experiment": "risk_eta", "eps": [0.01], "seed": 3,
    "mlmc": {"pilot_samples": 2000},
    "risk": {"threshold": 1.0, "scheme": "adaptive"}})");
  const ReportRecord rec = run_experiment(c).records.at(0);
  EXPECT_NEAR(rec.estimate, 0.158655, 3.0 * rec.std_error);
  EXPECT_NEAR(*rec.oracle, 0.158655, 1e-6);
}

TEST(RunExperiment, ReplicatesUseDistinctSeeds) {
  EXPECT_EQ(replicate_seed(42, 0), 42u);
  EXPECT_NE(replicate_seed(42, 1), replicate_seed(42, 2));
  const ExperimentConfig c = parse_config(R"({"eps": [0.05, 0.02], "replicates": 2, "mlmc": {"pilot_samples": 500}})");
  const ExperimentResult r = run_experiment(c);
  ASSERT_EQ(r.records.size(), 4u);
  EXPECT_EQ(r.records[0].replicate, 0);
  EXPECT_EQ(r.records[2].replicate, 1);
  EXPECT_NE(r.records[0].estimate, r.records[2].estimate);
}

TEST(RunExperiment, ConvergenceFailureKeepsTypeAndContext) {
  const ExperimentConfig c = parse_config(R"({"eps": [0.0005], "mlmc": {"max_level": 2, "initial_levels": 2, "pilot_samples": 200}})");
  try {
    run_experiment(c);
    FAIL() << "expected a convergence error";
  } catch (const BiasTargetUnreachable& e) {
    EXPECT_NE(std::string(e.what()).find("replicate 0"), std::string::npos);
    EXPECT_FALSE(e.partial().levels.empty());
  }
}

TEST(RunExperiment, RatesSweepFitsEveryLevelButTheFirst) {
  const ExperimentConfig c = parse_config(R"({"experiment": "rates_sweep",
    "rates": {"samples_per_level": 20000, "first_level": 1, "last_level": 5}})");
  const ReportRecord rec = run_experiment(c).records.at(0);
  ASSERT_TRUE(rec.rates.has_value());
  EXPECT_EQ(rec.rates->fit_first, 2);
  EXPECT_EQ(rec.rates->fit_last, 5);
  EXPECT_EQ(rec.levels.size(), 5u);
  EXPECT_NEAR(rec.rates->gamma, 1.0, 0.1);
}

TEST(Determinism, ThreadCountNeverChangesReports) {
  const char* configs[] = {
      R"({"experiment": "price", "eps": [0.01], "seed": 2, "mlmc": {"pilot_samples": 3000}})",
      R"({"experiment": "price_is", "eps": [0.005], "seed": 2,
          "model": {"params": {"x0": 1}}, "payoff": {"params": {"strike": 1.5}},
          "mlmc": {"pilot_samples": 2000, "base_steps": 4},
          "is": {"method": "saa", "pilot_samples": 3000, "schedule_levels": 2, "baseline_samples": 2000}})",
      R"({"experiment": "price_is_adaptive", "eps": [0.01], "seed": 2,
          "mlmc": {"pilot_samples": 2000}, "is": {"rm": {"iterations": 500}}})",
      R"({"experiment": "risk_eta", "eps": [0.02], "seed": 2, "mlmc": {"pilot_samples": 1000},
          "risk": {"scheme": "uniform"}})",
      R"({"experiment": "risk_eta", "eps": [0.02], "seed": 2, "mlmc": {"pilot_samples": 1000},
          "risk": {"scheme": "nested_mc"}})",
      R"({"experiment": "rates_sweep", "seed": 2, "rates": {"target": "risk", "samples_per_level": 3000,
          "first_level": 0, "last_level": 3}})",
  };
  for (const char* text : configs) {
    ExperimentConfig c = parse_config(text);
    std::vector<std::string> baseline;
    for (int threads : {1, 2, 8}) {
      c.mlmc.threads = threads;
      const auto texts = record_texts(run_experiment(c));
      if (baseline.empty()) baseline = texts;
      else EXPECT_EQ(texts, baseline) << text << " threads " << threads;
    }
  }
}

TEST(Outputs, FilesHaveFixedColumns) {
  ExperimentConfig c = parse_config(R"({"eps": [0.05, 0.02], "replicates": 2, "mlmc": {"pilot_samples": 500}})");
  const fs::path dir = temp_dir("outputs");
  const ExperimentResult r = run_experiment(c);
  write_outputs(r, dir);
  EXPECT_TRUE(fs::exists(dir / "report_0.json"));
  EXPECT_TRUE(fs::exists(dir / "report_1.json"));
  const std::string levels = read_file(dir / "levels.csv");
  EXPECT_EQ(levels.rfind("# mlmc levels.csv v1\nexperiment,replicate,level,N,mean,var,cost,kurtosis,theta_norm\n", 0), 0u);
  std::size_t rows = 0;
  for (const auto& rec : r.records) rows += rec.levels.size();
  EXPECT_EQ(static_cast<std::size_t>(std::count(levels.begin(), levels.end(), '\n')), rows + 2);
  EXPECT_NE(levels.find("price@0.05,1,"), std::string::npos);
  const std::string summary = read_file(dir / "summary.csv");
  EXPECT_EQ(static_cast<std::size_t>(std::count(summary.begin(), summary.end(), '\n')), r.records.size() + 2);
  // Same config and seed: CSVs are byte-identical.
  const fs::path again = temp_dir("outputs_again");
  write_outputs(run_experiment(c), again);
  EXPECT_EQ(read_file(again / "levels.csv"), levels);
  EXPECT_EQ(read_file(again / "summary.csv"), summary);
  fs::remove_all(dir);
  fs::remove_all(again);
}

TEST(Sweep, SyntheticInverseSquareCostsGiveMinusTwo) {
  const std::vector<double> eps{0.04, 0.02, 0.01, 0.005};
  std::vector<double> cost;
  for (double e : eps) cost.push_back(7.0 / (e * e));
  const SweepResult s = fit_cost_slope(eps, cost);
  EXPECT_NEAR(s.slope, -2.0, 1e-12);
  EXPECT_NEAR(s.intercept, std::log(7.0), 1e-10);
}

TEST(Sweep, InsufficientPointsRejected) {
  EXPECT_THROW(fit_cost_slope({0.01, 0.005}, {1, 2}), InvalidArgument);
  EXPECT_THROW(fit_cost_slope({0.01, 0.008, 0.005}, {1, 2, 3}), InvalidArgument);
  EXPECT_THROW(fit_cost_slope({0.01, 0.005, 0.0025}, {1, 2}), InvalidArgument);
  const ExperimentConfig c = parse_config(R"({"eps": [0.01, 0.005]})");
  EXPECT_THROW(sweep_and_fit(c), InvalidArgument);
}

TEST(Sweep, PlainNestedMcCostsScaleLikeInverseCube) {
  const ExperimentConfig c = parse_config(R"({"experiment": "risk_eta", "eps": [0.08, 0.04, 0.02],
    "risk": {"scheme": "nested_mc", "threshold": 0.5}})");
  const SweepResult s = sweep_and_fit(c);
  EXPECT_GE(s.slope, -3.4);
  EXPECT_LE(s.slope, -2.7);
  const fs::path dir = temp_dir("sweep");
  write_sweep(s, dir);
  EXPECT_NE(read_file(dir / "sweep.csv").find("eps,mean_cost"), std::string::npos);
  fs::remove_all(dir);
}
