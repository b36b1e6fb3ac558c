// mlmc command line front end. Talks to the engine through the C interface
// only.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mlmc/mlmc_c.h"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<int> replicates;
};

int exit_code(mlmc_status s) {
  switch (s) {
    case MLMC_OK: return 0;
    case MLMC_E_CONFIG: return 2;
    case MLMC_E_CONVERGENCE: return 3;
    default: return 1;
  }
}

int report(mlmc_status s) {
  if (s == MLMC_OK) return 0;
  std::fprintf(stderr, "mlmc: %s error: %s\n", mlmc_status_name(s), mlmc_last_error());
  return exit_code(s);
}

std::string get_string(mlmc_status (*getter)(const mlmc_experiment*, char*, size_t, size_t*),
                       const mlmc_experiment* exp) {
  size_t needed = 0;
  if (getter(exp, nullptr, 0, &needed) != MLMC_OK) return {};
  std::vector<char> buf(needed);
  if (getter(exp, buf.data(), buf.size(), &needed) != MLMC_OK) return {};
  return buf.data();
}

/// Loads the config and applies command-line overrides.
mlmc_status load(const Overrides& o, mlmc_experiment** exp) {
  mlmc_status s = mlmc_experiment_from_file(o.config.c_str(), exp);
  if (s != MLMC_OK) return s;
  if (o.seed && (s = mlmc_experiment_set_seed(*exp, *o.seed)) != MLMC_OK) return s;
  if (o.out && (s = mlmc_experiment_set_output_dir(*exp, o.out->c_str())) != MLMC_OK) return s;
  if (o.threads && (s = mlmc_experiment_set_threads(*exp, *o.threads)) != MLMC_OK) return s;
  if (o.replicates && (s = mlmc_experiment_set_replicates(*exp, *o.replicates)) != MLMC_OK) return s;
  return MLMC_OK;
}

void print_summary(const mlmc_result* result) {
  std::printf("%-4s %-10s %-14s %-12s %-12s %-8s %s\n", "rep", "eps", "estimate", "std_error", "cost",
              "levels", "oracle");
  for (size_t i = 0; i < mlmc_result_count(result); ++i) {
    mlmc_record_summary r;
    if (mlmc_result_summary(result, i, &r) != MLMC_OK) continue;
    std::printf("%-4d %-10.4g %-14.8g %-12.4g %-12.4g %-8d", r.replicate, r.eps, r.estimate, r.std_error,
                r.total_cost, r.level_count);
    if (r.has_oracle) std::printf(" %.8g", r.oracle);
    std::printf("\n");
    if (r.has_rates) std::printf("     rates: alpha %.3f beta %.3f gamma %.3f\n", r.alpha, r.beta, r.gamma);
    if (r.has_variance_slope) std::printf("     variance slope %.3f\n", r.variance_slope);
    if (r.has_var_cvar) std::printf("     VaR %.6f CVaR %.6f\n", r.var, r.cvar);
  }
}

int cmd_run(const Overrides& o) {
  mlmc_experiment* exp = nullptr;
  mlmc_status s = load(o, &exp);
  if (s != MLMC_OK) {
    mlmc_experiment_free(exp);
    return report(s);
  }
  mlmc_result* result = nullptr;
  s = mlmc_run(exp, &result);
  if (s == MLMC_OK) {
    const std::string dir = get_string(mlmc_experiment_output_dir, exp);
    s = mlmc_result_write(result, dir.c_str());
    if (s == MLMC_OK) {
      print_summary(result);
      std::printf("wrote %s\n", dir.c_str());
    }
  }
  mlmc_result_free(result);
  mlmc_experiment_free(exp);
  return report(s);
}

int cmd_sweep(const Overrides& o) {
  mlmc_experiment* exp = nullptr;
  mlmc_status s = load(o, &exp);
  if (s != MLMC_OK) {
    mlmc_experiment_free(exp);
    return report(s);
  }
  mlmc_sweep* sweep = nullptr;
  s = mlmc_sweep_run(exp, &sweep);
  if (s == MLMC_OK) {
    const std::string dir = get_string(mlmc_experiment_output_dir, exp);
    s = mlmc_sweep_write(sweep, dir.c_str());
    if (s == MLMC_OK) {
      std::printf("%-12s %s\n", "eps", "mean_cost");
      for (size_t i = 0; i < mlmc_sweep_points(sweep); ++i) {
        double eps = 0, cost = 0;
        mlmc_sweep_point(sweep, i, &eps, &cost);
        std::printf("%-12.6g %.6g\n", eps, cost);
      }
      std::printf("slope %.4f intercept %.4f\nwrote %s\n", mlmc_sweep_slope(sweep), mlmc_sweep_intercept(sweep),
                  dir.c_str());
    }
  }
  mlmc_sweep_free(sweep);
  mlmc_experiment_free(exp);
  return report(s);
}

int cmd_validate(const Overrides& o, bool print) {
  mlmc_experiment* exp = nullptr;
  const mlmc_status s = load(o, &exp);
  if (s == MLMC_OK) {
    std::printf("ok %s\n", get_string(mlmc_experiment_hash, exp).c_str());
    if (print) std::printf("%s\n", get_string(mlmc_experiment_canonical_json, exp).c_str());
  } else if (*mlmc_last_error_field()) {
    std::fprintf(stderr, "field: %s\n", mlmc_last_error_field());
  }
  mlmc_experiment_free(exp);
  return report(s);
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("config", o.config, "Experiment config (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the seed");
  cmd->add_option("--out", o.out, "Override the output directory");
  cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  cmd->add_option("--replicates", o.replicates, "Override the replicate count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel Monte Carlo experiments"};
  app.set_version_flag("--version", std::string(mlmc_version()));
  app.require_subcommand(1);

  Overrides run_o, sweep_o, validate_o;
  bool print = false;
  CLI::App* run = app.add_subcommand("run", "Run an experiment and write reports");
  add_overrides(run, run_o);
  CLI::App* sweep = app.add_subcommand("sweep", "Run over the eps list and fit the cost slope");
  add_overrides(sweep, sweep_o);
  CLI::App* validate = app.add_subcommand("validate", "Check a config without running it");
  add_overrides(validate, validate_o);
  validate->add_flag("--print", print, "Print the canonical form");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (*run) return cmd_run(run_o);
  if (*sweep) return cmd_sweep(sweep_o);
  return cmd_validate(validate_o, print);
}
