#include "mlmc/mlmc_c.h"

#include <cmath>
#include <cstring>
#include <new>
#include <string>

#include "mlmc/experiment.hpp"

struct mlmc_experiment {
  mlmc::ExperimentConfig config;
};

struct mlmc_result {
  mlmc::ExperimentResult result;
};

struct mlmc_sweep {
  mlmc::SweepResult fit;
  mlmc::ExperimentResult runs;
};

namespace {

thread_local std::string g_error;
thread_local std::string g_field;

mlmc_status fail(mlmc_status s, const std::string& message, std::string field = {}) {
  g_error = message;
  g_field = std::move(field);
  return s;
}

/// Runs f, mapping each engine exception onto its status.
template <class F>
mlmc_status guard(F&& f) {
  g_error.clear();
  g_field.clear();
  try {
    f();
    return MLMC_OK;
  } catch (const mlmc::ConfigError& e) {
    return fail(MLMC_E_CONFIG, e.what(), e.field_path());
  } catch (const mlmc::InvalidArgument& e) {
    return fail(MLMC_E_INVALID_ARGUMENT, e.what());
  } catch (const mlmc::StateError& e) {
    return fail(MLMC_E_STATE, e.what());
  } catch (const mlmc::ConvergenceError& e) {
    return fail(MLMC_E_CONVERGENCE, e.what());
  } catch (const mlmc::DegenerateObjective& e) {
    return fail(MLMC_E_DEGENERATE, e.what());
  } catch (const mlmc::BracketError& e) {
    return fail(MLMC_E_BRACKET, e.what());
  } catch (const mlmc::Error& e) {
    return fail(MLMC_E_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(MLMC_E_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(MLMC_E_INTERNAL, e.what());
  } catch (...) {
    return fail(MLMC_E_INTERNAL, "unknown error");
  }
}

mlmc_status copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf) return needed ? MLMC_OK : fail(MLMC_E_INVALID_ARGUMENT, "buffer and size pointer are both null");
  if (cap < s.size() + 1) return fail(MLMC_E_INVALID_ARGUMENT, "buffer too small");
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return MLMC_OK;
}

#define MLMC_REQUIRE(ptr)                                                        \
  do {                                                                           \
    if (!(ptr)) return fail(MLMC_E_INVALID_ARGUMENT, #ptr " must not be null"); \
  } while (0)

/// Applies `change` to a copy and keeps it only if it validates.
template <class F>
mlmc_status update(mlmc_experiment* exp, F&& change) {
  MLMC_REQUIRE(exp);
  return guard([&] {
    mlmc::ExperimentConfig next = exp->config;
    change(next);
    next.validate();
    exp->config = std::move(next);
  });
}

}  // namespace

extern "C" {

const char* mlmc_version(void) { return "1.0.0"; }

const char* mlmc_last_error(void) { return g_error.c_str(); }

const char* mlmc_last_error_field(void) { return g_field.c_str(); }

const char* mlmc_status_name(mlmc_status status) {
  switch (status) {
    case MLMC_OK: return "ok";
    case MLMC_E_INVALID_ARGUMENT: return "invalid_argument";
    case MLMC_E_STATE: return "state";
    case MLMC_E_CONVERGENCE: return "convergence";
    case MLMC_E_DEGENERATE: return "degenerate";
    case MLMC_E_BRACKET: return "bracket";
    case MLMC_E_CONFIG: return "config";
    case MLMC_E_IO: return "io";
    case MLMC_E_INTERNAL: return "internal";
  }
  return "unknown";
}

mlmc_status mlmc_experiment_from_json(const char* json_text, mlmc_experiment** out) {
  MLMC_REQUIRE(json_text);
  MLMC_REQUIRE(out);
  *out = nullptr;
  return guard([&] { *out = new mlmc_experiment{mlmc::parse_config(json_text)}; });
}

mlmc_status mlmc_experiment_from_file(const char* path, mlmc_experiment** out) {
  MLMC_REQUIRE(path);
  MLMC_REQUIRE(out);
  *out = nullptr;
  return guard([&] { *out = new mlmc_experiment{mlmc::load_config(path)}; });
}

void mlmc_experiment_free(mlmc_experiment* exp) { delete exp; }

mlmc_status mlmc_experiment_set_seed(mlmc_experiment* exp, uint64_t seed) {
  return update(exp, [&](mlmc::ExperimentConfig& c) { c.seed = seed; });
}

mlmc_status mlmc_experiment_set_threads(mlmc_experiment* exp, int threads) {
  return update(exp, [&](mlmc::ExperimentConfig& c) { c.mlmc.threads = threads; });
}

mlmc_status mlmc_experiment_set_output_dir(mlmc_experiment* exp, const char* dir) {
  MLMC_REQUIRE(dir);
  return update(exp, [&](mlmc::ExperimentConfig& c) { c.output_dir = dir; });
}

mlmc_status mlmc_experiment_set_replicates(mlmc_experiment* exp, int replicates) {
  return update(exp, [&](mlmc::ExperimentConfig& c) { c.replicates = replicates; });
}

mlmc_status mlmc_experiment_canonical_json(const mlmc_experiment* exp, char* buf, size_t cap, size_t* needed) {
  MLMC_REQUIRE(exp);
  std::string s;
  const mlmc_status st = guard([&] { s = mlmc::canonical_json(exp->config); });
  return st == MLMC_OK ? copy_out(s, buf, cap, needed) : st;
}

mlmc_status mlmc_experiment_hash(const mlmc_experiment* exp, char* buf, size_t cap, size_t* needed) {
  MLMC_REQUIRE(exp);
  std::string s;
  const mlmc_status st = guard([&] { s = mlmc::config_hash(exp->config); });
  return st == MLMC_OK ? copy_out(s, buf, cap, needed) : st;
}

mlmc_status mlmc_experiment_output_dir(const mlmc_experiment* exp, char* buf, size_t cap, size_t* needed) {
  MLMC_REQUIRE(exp);
  return copy_out(exp->config.output_dir, buf, cap, needed);
}

mlmc_status mlmc_run(const mlmc_experiment* exp, mlmc_result** out) {
  MLMC_REQUIRE(exp);
  MLMC_REQUIRE(out);
  *out = nullptr;
  return guard([&] { *out = new mlmc_result{mlmc::run_experiment(exp->config)}; });
}

void mlmc_result_free(mlmc_result* result) { delete result; }

size_t mlmc_result_count(const mlmc_result* result) { return result ? result->result.records.size() : 0; }

mlmc_status mlmc_result_summary(const mlmc_result* result, size_t index, mlmc_record_summary* out) {
  MLMC_REQUIRE(result);
  MLMC_REQUIRE(out);
  if (index >= result->result.records.size()) return fail(MLMC_E_INVALID_ARGUMENT, "record index out of range");
  const mlmc::ReportRecord& r = result->result.records[index];
  mlmc_record_summary s{};
  s.replicate = r.replicate;
  s.seed = r.seed;
  s.eps = r.eps;
  s.estimate = r.estimate;
  s.std_error = r.std_error;
  s.total_cost = r.total_cost;
  s.bias_converged = r.bias_converged ? 1 : 0;
  s.level_count = static_cast<int>(r.levels.size());
  s.alpha = s.beta = s.gamma = s.variance_slope = s.oracle = s.var = s.cvar = std::nan("");
  if (r.rates) {
    s.has_rates = 1;
    s.alpha = r.rates->alpha;
    s.beta = r.rates->beta;
    s.gamma = r.rates->gamma;
  }
  if (r.variance_slope) {
    s.has_variance_slope = 1;
    s.variance_slope = *r.variance_slope;
  }
  if (r.oracle) {
    s.has_oracle = 1;
    s.oracle = *r.oracle;
  }
  if (r.var_cvar) {
    s.has_var_cvar = 1;
    s.var = r.var_cvar->var;
    s.cvar = r.var_cvar->cvar;
  }
  *out = s;
  return MLMC_OK;
}

mlmc_status mlmc_result_json(const mlmc_result* result, size_t index, int with_timestamps, char* buf, size_t cap,
                             size_t* needed) {
  MLMC_REQUIRE(result);
  if (index >= result->result.records.size()) return fail(MLMC_E_INVALID_ARGUMENT, "record index out of range");
  std::string s;
  const mlmc_status st =
      guard([&] { s = mlmc::record_json(result->result.records[index], with_timestamps != 0); });
  return st == MLMC_OK ? copy_out(s, buf, cap, needed) : st;
}

mlmc_status mlmc_result_write(const mlmc_result* result, const char* dir) {
  MLMC_REQUIRE(result);
  MLMC_REQUIRE(dir);
  return guard([&] { mlmc::write_outputs(result->result, dir); });
}

mlmc_status mlmc_sweep_run(const mlmc_experiment* exp, mlmc_sweep** out) {
  MLMC_REQUIRE(exp);
  MLMC_REQUIRE(out);
  *out = nullptr;
  return guard([&] {
    auto* s = new mlmc_sweep;
    try {
      s->fit = mlmc::sweep_and_fit(exp->config, &s->runs);
    } catch (...) {
      delete s;
      throw;
    }
    *out = s;
  });
}

void mlmc_sweep_free(mlmc_sweep* sweep) { delete sweep; }

double mlmc_sweep_slope(const mlmc_sweep* sweep) { return sweep ? sweep->fit.slope : std::nan(""); }

double mlmc_sweep_intercept(const mlmc_sweep* sweep) { return sweep ? sweep->fit.intercept : std::nan(""); }

size_t mlmc_sweep_points(const mlmc_sweep* sweep) { return sweep ? sweep->fit.eps.size() : 0; }

mlmc_status mlmc_sweep_point(const mlmc_sweep* sweep, size_t index, double* eps, double* mean_cost) {
  MLMC_REQUIRE(sweep);
  if (index >= sweep->fit.eps.size()) return fail(MLMC_E_INVALID_ARGUMENT, "sweep point out of range");
  if (eps) *eps = sweep->fit.eps[index];
  if (mean_cost) *mean_cost = sweep->fit.mean_costs[index];
  return MLMC_OK;
}

mlmc_status mlmc_sweep_write(const mlmc_sweep* sweep, const char* dir) {
  MLMC_REQUIRE(sweep);
  MLMC_REQUIRE(dir);
  return guard([&] {
    mlmc::write_outputs(sweep->runs, dir);
    mlmc::write_sweep(sweep->fit, dir);
  });
}

mlmc_status mlmc_fit_cost_slope(const double* eps, const double* costs, size_t n, double* slope,
                                double* intercept) {
  MLMC_REQUIRE(eps);
  MLMC_REQUIRE(costs);
  MLMC_REQUIRE(slope);
  return guard([&] {
    const mlmc::SweepResult s =
        mlmc::fit_cost_slope(std::vector<double>(eps, eps + n), std::vector<double>(costs, costs + n));
    *slope = s.slope;
    if (intercept) *intercept = s.intercept;
  });
}

}  // extern "C"
