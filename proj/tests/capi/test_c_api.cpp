// Exercises the shared library through its C header only.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "mlmc/mlmc_c.h"

namespace {

const char* kSmallPrice = R"({"experiment": "price", "eps": [0.02], "seed": 4, "mlmc": {"pilot_samples": 500}})";

struct Experiment {
  mlmc_experiment* p = nullptr;
  ~Experiment() { mlmc_experiment_free(p); }
};

struct Result {
  mlmc_result* p = nullptr;
  ~Result() { mlmc_result_free(p); }
};

std::string canonical(const mlmc_experiment* e) {
  size_t n = 0;
  EXPECT_EQ(mlmc_experiment_canonical_json(e, nullptr, 0, &n), MLMC_OK);
  std::vector<char> buf(n);
  EXPECT_EQ(mlmc_experiment_canonical_json(e, buf.data(), buf.size(), &n), MLMC_OK);
  return buf.data();
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STREQ(mlmc_version(), "1.0.0");
  EXPECT_STREQ(mlmc_status_name(MLMC_E_CONVERGENCE), "convergence");
  EXPECT_STREQ(mlmc_status_name(MLMC_OK), "ok");
}

TEST(CApi, ParseAndCanonicalRoundTrip) {
  Experiment a, b;
  ASSERT_EQ(mlmc_experiment_from_json(kSmallPrice, &a.p), MLMC_OK);
  const std::string text = canonical(a.p);
  ASSERT_EQ(mlmc_experiment_from_json(text.c_str(), &b.p), MLMC_OK);
  EXPECT_EQ(canonical(b.p), text);
  char h1[17], h2[17];
  ASSERT_EQ(mlmc_experiment_hash(a.p, h1, sizeof h1, nullptr), MLMC_OK);
  ASSERT_EQ(mlmc_experiment_hash(b.p, h2, sizeof h2, nullptr), MLMC_OK);
  EXPECT_STREQ(h1, h2);
}

TEST(CApi, ConfigErrorsCarryFieldPath) {
  Experiment e;
  EXPECT_EQ(mlmc_experiment_from_json(R"({"risk": {"quantile": 2}})", &e.p), MLMC_E_CONFIG);
  EXPECT_EQ(e.p, nullptr);
  EXPECT_STREQ(mlmc_last_error_field(), "risk.quantile");
  EXPECT_NE(std::string(mlmc_last_error()).find("risk.quantile"), std::string::npos);
  EXPECT_EQ(mlmc_experiment_from_file("/nonexistent.json", &e.p), MLMC_E_CONFIG);
}

TEST(CApi, NullArgumentsRejected) {
  mlmc_experiment* e = nullptr;
  EXPECT_EQ(mlmc_experiment_from_json(nullptr, &e), MLMC_E_INVALID_ARGUMENT);
  EXPECT_EQ(mlmc_experiment_from_json("{}", nullptr), MLMC_E_INVALID_ARGUMENT);
  EXPECT_EQ(mlmc_run(nullptr, nullptr), MLMC_E_INVALID_ARGUMENT);
  EXPECT_EQ(mlmc_experiment_set_seed(nullptr, 1), MLMC_E_INVALID_ARGUMENT);
  EXPECT_EQ(mlmc_result_count(nullptr), 0u);
  mlmc_experiment_free(nullptr);
  mlmc_result_free(nullptr);
  mlmc_sweep_free(nullptr);
}

TEST(CApi, SmallBufferReportsNeededSize) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(kSmallPrice, &e.p), MLMC_OK);
  char tiny[4];
  size_t needed = 0;
  EXPECT_EQ(mlmc_experiment_hash(e.p, tiny, sizeof tiny, &needed), MLMC_E_INVALID_ARGUMENT);
  EXPECT_EQ(needed, 17u);
}

TEST(CApi, InvalidOverrideLeavesConfigUntouched) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(kSmallPrice, &e.p), MLMC_OK);
  const std::string before = canonical(e.p);
  EXPECT_EQ(mlmc_experiment_set_threads(e.p, -2), MLMC_E_CONFIG);
  EXPECT_STREQ(mlmc_last_error_field(), "mlmc.threads");
  EXPECT_EQ(canonical(e.p), before);
  EXPECT_EQ(mlmc_experiment_set_seed(e.p, 77), MLMC_OK);
  EXPECT_NE(canonical(e.p).find("\"seed\": 77"), std::string::npos);
}

TEST(CApi, RunSummariseAndWrite) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(kSmallPrice, &e.p), MLMC_OK);
  Result r;
  ASSERT_EQ(mlmc_run(e.p, &r.p), MLMC_OK) << mlmc_last_error();
  ASSERT_EQ(mlmc_result_count(r.p), 1u);
  mlmc_record_summary s;
  ASSERT_EQ(mlmc_result_summary(r.p, 0, &s), MLMC_OK);
  EXPECT_EQ(s.seed, 4u);
  EXPECT_EQ(s.has_oracle, 1);
  EXPECT_NEAR(s.estimate, s.oracle, 0.1);
  EXPECT_GT(s.level_count, 0);
  EXPECT_EQ(mlmc_result_summary(r.p, 5, &s), MLMC_E_INVALID_ARGUMENT);

  size_t n = 0;
  ASSERT_EQ(mlmc_result_json(r.p, 0, 0, nullptr, 0, &n), MLMC_OK);
  std::vector<char> buf(n);
  ASSERT_EQ(mlmc_result_json(r.p, 0, 0, buf.data(), buf.size(), &n), MLMC_OK);
  EXPECT_EQ(std::string(buf.data()).find("started_at"), std::string::npos);

  const auto dir = std::filesystem::temp_directory_path() / "mlmc_capi_out";
  std::filesystem::remove_all(dir);
  ASSERT_EQ(mlmc_result_write(r.p, dir.c_str()), MLMC_OK);
  EXPECT_TRUE(std::filesystem::exists(dir / "report_0.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "levels.csv"));
  EXPECT_TRUE(std::filesystem::exists(dir / "summary.csv"));
  std::filesystem::remove_all(dir);
}

TEST(CApi, ConvergenceFailureStatus) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(
                R"({"eps": [0.0005], "mlmc": {"max_level": 2, "initial_levels": 2, "pilot_samples": 200}})", &e.p),
            MLMC_OK);
  Result r;
  EXPECT_EQ(mlmc_run(e.p, &r.p), MLMC_E_CONVERGENCE);
  EXPECT_EQ(r.p, nullptr);
}

TEST(CApi, BracketFailureStatus) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(
                R"({"experiment": "risk_var_cvar", "eps": [0.05],
                    "risk": {"quantile": 0.00001, "pilot_scenarios": 1000}})", &e.p),
            MLMC_OK);
  Result r;
  EXPECT_EQ(mlmc_run(e.p, &r.p), MLMC_E_BRACKET);
}

TEST(CApi, ErrorsAreThreadLocal) {
  Experiment e;
  EXPECT_EQ(mlmc_experiment_from_json("{bad", &e.p), MLMC_E_CONFIG);
  std::string other;
  std::thread t([&] {
    mlmc_experiment* ok = nullptr;
    mlmc_experiment_from_json("{}", &ok);
    other = mlmc_last_error();
    mlmc_experiment_free(ok);
  });
  t.join();
  EXPECT_EQ(other, "");
  EXPECT_NE(std::string(mlmc_last_error()), "");
}

TEST(CApi, FitCostSlope) {
  const double eps[] = {0.04, 0.02, 0.01};
  const double cost[] = {1.0 / (0.04 * 0.04), 1.0 / (0.02 * 0.02), 1.0 / (0.01 * 0.01)};
  double slope = 0, intercept = 1;
  ASSERT_EQ(mlmc_fit_cost_slope(eps, cost, 3, &slope, &intercept), MLMC_OK);
  EXPECT_NEAR(slope, -2.0, 1e-12);
  EXPECT_NEAR(intercept, 0.0, 1e-10);
  EXPECT_EQ(mlmc_fit_cost_slope(eps, cost, 2, &slope, nullptr), MLMC_E_INVALID_ARGUMENT);
}

TEST(CApi, SweepThroughHandle) {
  Experiment e;
  ASSERT_EQ(mlmc_experiment_from_json(R"({"experiment": "risk_eta", "eps": [0.08, 0.04, 0.02],
                                          "risk": {"scheme": "nested_mc"}})", &e.p),
            MLMC_OK);
  mlmc_sweep* s = nullptr;
  ASSERT_EQ(mlmc_sweep_run(e.p, &s), MLMC_OK) << mlmc_last_error();
  EXPECT_EQ(mlmc_sweep_points(s), 3u);
  double eps = 0, cost = 0;
  ASSERT_EQ(mlmc_sweep_point(s, 2, &eps, &cost), MLMC_OK);
  EXPECT_EQ(eps, 0.02);
  EXPECT_GT(cost, 0.0);
  EXPECT_LT(mlmc_sweep_slope(s), -2.7);
  mlmc_sweep_free(s);
}
