#ifndef MLMC_C_H
#define MLMC_C_H

/* C interface to the engine. Every call returns a status; on failure
 * mlmc_last_error() describes it (per thread, valid until the next call on
 * that thread). Handles are opaque and owned by the caller. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MLMC_API __declspec(dllexport)
#else
#define MLMC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mlmc_status {
  MLMC_OK = 0,
  MLMC_E_INVALID_ARGUMENT = 1,
  MLMC_E_STATE = 2,
  MLMC_E_CONVERGENCE = 3,
  MLMC_E_DEGENERATE = 4,
  MLMC_E_BRACKET = 5,
  MLMC_E_CONFIG = 6,
  MLMC_E_IO = 7,
  MLMC_E_INTERNAL = 8
} mlmc_status;

typedef struct mlmc_experiment mlmc_experiment;
typedef struct mlmc_result mlmc_result;
typedef struct mlmc_sweep mlmc_sweep;

typedef struct mlmc_record_summary {
  int replicate;
  uint64_t seed;
  double eps;
  double estimate;
  double std_error; /* NaN when not defined for the experiment */
  double total_cost;
  int bias_converged;
  int level_count;
  int has_rates;
  double alpha, beta, gamma;
  int has_variance_slope;
  double variance_slope;
  int has_oracle;
  double oracle;
  int has_var_cvar;
  double var, cvar;
} mlmc_record_summary;

MLMC_API const char* mlmc_version(void);
MLMC_API const char* mlmc_last_error(void);
MLMC_API const char* mlmc_status_name(mlmc_status status);
/* Field path of the last MLMC_E_CONFIG error, or "" otherwise. */
MLMC_API const char* mlmc_last_error_field(void);

MLMC_API mlmc_status mlmc_experiment_from_json(const char* json_text, mlmc_experiment** out);
MLMC_API mlmc_status mlmc_experiment_from_file(const char* path, mlmc_experiment** out);
MLMC_API void mlmc_experiment_free(mlmc_experiment* exp);

/* Overrides; each revalidates the config. */
MLMC_API mlmc_status mlmc_experiment_set_seed(mlmc_experiment* exp, uint64_t seed);
MLMC_API mlmc_status mlmc_experiment_set_threads(mlmc_experiment* exp, int threads);
MLMC_API mlmc_status mlmc_experiment_set_output_dir(mlmc_experiment* exp, const char* dir);
MLMC_API mlmc_status mlmc_experiment_set_replicates(mlmc_experiment* exp, int replicates);

/* String getters copy into buf (NUL-terminated) when cap is large enough and
 * always store the required size including the NUL in *needed. A buffer
 * that is too small gives MLMC_E_INVALID_ARGUMENT. */
MLMC_API mlmc_status mlmc_experiment_canonical_json(const mlmc_experiment* exp, char* buf, size_t cap,
                                                    size_t* needed);
MLMC_API mlmc_status mlmc_experiment_hash(const mlmc_experiment* exp, char* buf, size_t cap, size_t* needed);
MLMC_API mlmc_status mlmc_experiment_output_dir(const mlmc_experiment* exp, char* buf, size_t cap,
                                                size_t* needed);

MLMC_API mlmc_status mlmc_run(const mlmc_experiment* exp, mlmc_result** out);
MLMC_API void mlmc_result_free(mlmc_result* result);
MLMC_API size_t mlmc_result_count(const mlmc_result* result);
MLMC_API mlmc_status mlmc_result_summary(const mlmc_result* result, size_t index, mlmc_record_summary* out);
/* Record JSON; with_timestamps = 0 leaves out the wall-clock fields. */
MLMC_API mlmc_status mlmc_result_json(const mlmc_result* result, size_t index, int with_timestamps, char* buf,
                                      size_t cap, size_t* needed);
/* Writes report_<r>.json, levels.csv and summary.csv into dir. */
MLMC_API mlmc_status mlmc_result_write(const mlmc_result* result, const char* dir);

MLMC_API mlmc_status mlmc_sweep_run(const mlmc_experiment* exp, mlmc_sweep** out);
MLMC_API void mlmc_sweep_free(mlmc_sweep* sweep);
MLMC_API double mlmc_sweep_slope(const mlmc_sweep* sweep);
MLMC_API double mlmc_sweep_intercept(const mlmc_sweep* sweep);
MLMC_API size_t mlmc_sweep_points(const mlmc_sweep* sweep);
MLMC_API mlmc_status mlmc_sweep_point(const mlmc_sweep* sweep, size_t index, double* eps, double* mean_cost);
/* Writes the per-run outputs plus sweep.csv into dir. */
MLMC_API mlmc_status mlmc_sweep_write(const mlmc_sweep* sweep, const char* dir);

/* Least-squares slope of log cost against log eps. */
MLMC_API mlmc_status mlmc_fit_cost_slope(const double* eps, const double* costs, size_t n, double* slope,
                                         double* intercept);

#ifdef __cplusplus
}
#endif

#endif
