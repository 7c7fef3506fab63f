#ifndef HCTB_H
#define HCTB_H

/* C interface for hybrid-controlled-trial analysis with binary outcomes:
 * doubly robust external-control borrowing, conformal selective borrowing,
 * Fisher randomization tests, and the scenario simulation engine.
 *
 * Conventions: every fallible call returns hctb_status; on failure,
 * hctb_last_error() describes the problem for the calling thread. Strings
 * returned through char** are heap-allocated; release them with
 * hctb_string_free(). Configs and results are JSON documents (UTF-8);
 * numbers in results round-trip bit-exactly, and results never embed wall
 * clock, so identical inputs yield identical bytes. */

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HCTB_API __declspec(dllexport)
#else
#define HCTB_API __attribute__((visibility("default")))
#endif

typedef enum hctb_status {
  HCTB_OK = 0,
  HCTB_INVALID_ARGUMENT = 1,
  HCTB_IO = 2,
  HCTB_PARSE = 3,
  HCTB_VALIDATION = 4,
  HCTB_NUMERIC = 5,
  HCTB_INTERNAL = 6
} hctb_status;

typedef struct hctb_dataset hctb_dataset;

HCTB_API const char* hctb_version(void);

/* Message for the most recent failure on this thread; empty string if none. */
HCTB_API const char* hctb_last_error(void);

HCTB_API void hctb_string_free(char* s);

/* CSV columns y/a/s plus covariates; set validate_trial to 0 for EC pool
 * files, which have no treated arm. */
HCTB_API hctb_status hctb_dataset_load_csv(const char* path, int validate_trial,
                                           hctb_dataset** out);

/* x is row-major n * p. */
HCTB_API hctb_status hctb_dataset_from_arrays(int n, int p, const double* x,
                                              const int* y, const int* a,
                                              const int* s, hctb_dataset** out);

HCTB_API hctb_status hctb_dataset_write_csv(const hctb_dataset* ds,
                                            const char* path);

HCTB_API void hctb_dataset_free(hctb_dataset* ds);

HCTB_API int hctb_dataset_n(const hctb_dataset* ds);
HCTB_API int hctb_dataset_p(const hctb_dataset* ds);
HCTB_API int hctb_dataset_n_rct(const hctb_dataset* ds);
HCTB_API int hctb_dataset_n_ec(const hctb_dataset* ds);

/* config: {"methods": [...] (or "all"), "estimands": [...], "alpha", "gamma",
 * "adaptive", "folds", "adaptive_bootstrap", "se" ("eif"|"bootstrap"),
 * "bootstrap_reps", "with_frt", "frt_reps", "refit" ("full"|"fixed-gamma"),
 * "fit_propensity", "r_model" ("plugin"|"one"), "seed", "threads"} — all
 * optional except methods. Result: {"rows": [...], "warnings": [...],
 * "runtime_s"-free; see schemas/analyze_result.schema.json}. */
HCTB_API hctb_status hctb_analyze(const hctb_dataset* ds,
                                  const char* config_json, char** result_json);

/* config: {"method", "estimand", "reps", "seed", "refit", "gamma",
 * "adaptive", "folds", "adaptive_bootstrap", "exact", "threads"}.
 * Result: schemas/frt_result.schema.json. */
HCTB_API hctb_status hctb_frt(const hctb_dataset* ds, const char* config_json,
                              char** result_json);

/* config: scenario fields {"n_r","n1","n0","n_e","p","b","rho","sm_correct",
 * "om_correct","null_hypothesis","target_p0","target_p1","seed"} plus
 * {"methods","estimands","reps","alpha","with_frt","frt_reps","gamma",
 * "adaptive","folds","adaptive_bootstrap","threads"}.
 * Result: schemas/simulate_result.schema.json. */
HCTB_API hctb_status hctb_simulate(const char* config_json, char** result_json);

/* config: {"ratio"}. rct must be a valid trial dataset; pool holds untreated
 * rows only. Result: schemas/match_result.schema.json with the combined
 * dataset embedded as CSV text. */
HCTB_API hctb_status hctb_match(const hctb_dataset* rct,
                                const hctb_dataset* pool,
                                const char* config_json, char** result_json);

#ifdef __cplusplus
}
#endif

#endif /* HCTB_H */
