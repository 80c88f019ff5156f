#ifndef SHAPFED_H
#define SHAPFED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every call.
typedef enum ShapfedStatus {
  SHAPFED_STATUS_OK = 0,
  // A required pointer argument was null.
  SHAPFED_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  SHAPFED_STATUS_INVALID_UTF8 = 2,
  // The experiment configuration was rejected.
  SHAPFED_STATUS_CONFIG = 3,
  // Buffer lengths or dimensions do not fit together.
  SHAPFED_STATUS_SHAPE = 4,
  // Values out of range or otherwise malformed.
  SHAPFED_STATUS_INPUT = 5,
  // Inconsistent cross-round state.
  SHAPFED_STATUS_STATE = 6,
  // A file could not be read or written.
  SHAPFED_STATUS_IO = 7,
  // A utility callback reported failure.
  SHAPFED_STATUS_CALLBACK = 8,
  // An internal panic was caught at the boundary.
  SHAPFED_STATUS_PANIC = 9,
} ShapfedStatus;

typedef enum ShapfedModelKind {
  SHAPFED_MODEL_KIND_LOGISTIC = 0,
  SHAPFED_MODEL_KIND_MLP = 1,
} ShapfedModelKind;

// Parsed experiment configuration.
typedef struct ShapfedExperiment ShapfedExperiment;

// Per-round results of one trained strategy.
typedef struct ShapfedRunLog ShapfedRunLog;

// Model shape. `hidden` is ignored for logistic models.
typedef struct ShapfedModelSpec {
  enum ShapfedModelKind kind;
  size_t input_dim;
  size_t hidden;
  size_t num_classes;
} ShapfedModelSpec;

// Utility of a coalition for exact Shapley computation. `coalition` is a
// bit mask over participants; the callee writes `classes` values to `out`
// and returns 0 on success.
typedef int32_t (*ShapfedUtilityFn)(uint32_t coalition, double *out, size_t classes, void *user_data);

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *shapfed_last_error(void);

// Loads an experiment config file. Relative data paths resolve against the
// file's directory.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum ShapfedStatus shapfed_experiment_from_file(const char *path, struct ShapfedExperiment **out);

// Parses experiment config text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a writable pointer.
enum ShapfedStatus shapfed_experiment_from_str(const char *text, struct ShapfedExperiment **out);

// # Safety
// `exp` must come from `shapfed_experiment_from_*` and not be freed yet;
// null is ignored.
void shapfed_experiment_free(struct ShapfedExperiment *exp);

// Replaces the master seed.
//
// # Safety
// `exp` must be a live experiment handle.
enum ShapfedStatus shapfed_experiment_set_seed(struct ShapfedExperiment *exp, uint64_t seed);

// # Safety
// `exp` must be a live experiment handle and `out` writable.
enum ShapfedStatus shapfed_experiment_participants(const struct ShapfedExperiment *exp,
                                                   size_t *out);

// # Safety
// `exp` must be a live experiment handle and `out` writable.
enum ShapfedStatus shapfed_experiment_strategy_count(const struct ShapfedExperiment *exp,
                                                     size_t *out);

// Runs every configured strategy and writes the same files as
// `shapfed run`. A null `out_dir` uses the config's output directory;
// `workers == 0` uses all cores.
//
// # Safety
// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated.
enum ShapfedStatus shapfed_experiment_run(const struct ShapfedExperiment *exp,
                                          const char *out_dir_path,
                                          size_t workers);

// Writes `audit.json` as `shapfed shapley-audit` does and reports how
// many classes have matching top contributors.
//
// # Safety
// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated;
// `cssv_agreement` null or writable.
enum ShapfedStatus shapfed_experiment_audit(const struct ShapfedExperiment *exp,
                                            const char *out_dir_path,
                                            size_t workers,
                                            size_t *cssv_agreement);

// Writes `partition.csv` as `shapfed partition-report` does.
//
// # Safety
// `exp` must be a live experiment handle; `out_dir` null or NUL-terminated.
enum ShapfedStatus shapfed_experiment_partition_report(const struct ShapfedExperiment *exp,
                                                       const char *out_dir_path);

// Trains strategy number `strategy` (in config order) in memory.
//
// # Safety
// `exp` must be a live experiment handle and `out` writable.
enum ShapfedStatus shapfed_experiment_train(const struct ShapfedExperiment *exp,
                                            size_t strategy,
                                            size_t workers,
                                            struct ShapfedRunLog **out);

// # Safety
// `log` must come from `shapfed_experiment_train`; null is ignored.
void shapfed_run_log_free(struct ShapfedRunLog *log);

// Number of recorded rounds, participants and classes. Null outputs are
// skipped.
//
// # Safety
// `log` must be a live run-log handle; outputs null or writable.
enum ShapfedStatus shapfed_run_log_dims(const struct ShapfedRunLog *log,
                                        size_t *rounds,
                                        size_t *participants,
                                        size_t *classes);

// Raw and normalised importance weights after round index `round`
// (0-based). Each buffer holds `participants` values; either may be null.
//
// # Safety
// `log` must be a live run-log handle; non-null buffers must hold `len`
// values.
enum ShapfedStatus shapfed_run_log_gamma(const struct ShapfedRunLog *log,
                                         size_t round,
                                         double *raw,
                                         double *normalized,
                                         size_t len);

// Smoothed contribution matrix after round index `round`, row-major
// `participants x classes`.
//
// # Safety
// `log` must be a live run-log handle; `out` must hold `len` values.
enum ShapfedStatus shapfed_run_log_contributions(const struct ShapfedRunLog *log,
                                                 size_t round,
                                                 double *out,
                                                 size_t len);

// Global balanced accuracy and the balanced accuracy of each participant's
// delivered model after round index `round`. `participant_acc` holds
// `participants` values; either output may be null.
//
// # Safety
// `log` must be a live run-log handle; non-null outputs must be writable.
enum ShapfedStatus shapfed_run_log_accuracy(const struct ShapfedRunLog *log,
                                            size_t round,
                                            double *global_acc,
                                            double *participant_acc,
                                            size_t len);

// Pearson correlation between standalone and delivered-model accuracies.
//
// # Safety
// `log` must be a live run-log handle; outputs null or writable.
enum ShapfedStatus shapfed_run_log_fairness(const struct ShapfedRunLog *log,
                                            double *r,
                                            bool *degenerate);

// Length of a flat parameter vector for `spec`.
//
// # Safety
// `spec` and `out` must be valid pointers.
enum ShapfedStatus shapfed_param_count(const struct ShapfedModelSpec *spec, size_t *out);

// Deterministic initial parameters; `out` holds the parameter count.
//
// # Safety
// `spec` must be valid and `out` must hold `len` values.
enum ShapfedStatus shapfed_init_params(const struct ShapfedModelSpec *spec,
                                       uint64_t seed,
                                       double *out,
                                       size_t len);

// `gamma * global + (1 - gamma) * local` over parameter vectors of
// `spec`; all buffers hold `len` values.
//
// # Safety
// `spec` must be valid; each buffer must hold `len` values.
enum ShapfedStatus shapfed_personalize(const struct ShapfedModelSpec *spec,
                                       const double *global,
                                       const double *local,
                                       size_t len,
                                       double gamma,
                                       double *out);

// Class-specific cosine scores. `updates` holds `n` last-layer matrices,
// each as `classes` columns of `feature_dim` values; `aggregate` holds one
// such matrix. `out` receives the row-major `n x classes` result.
//
// # Safety
// Buffers must hold `n * classes * feature_dim`, `classes * feature_dim`
// and `n * classes` values respectively.
enum ShapfedStatus shapfed_cssv(const double *updates,
                                const double *aggregate,
                                size_t n,
                                size_t feature_dim,
                                size_t classes,
                                double *out);

// Importance weights from a row-major `n x classes` contribution matrix.
// `raw` and `normalized` each hold `n` values.
//
// # Safety
// `gamma` must hold `n * classes` values; outputs must hold `n` values.
enum ShapfedStatus shapfed_importance(const double *gamma,
                                      size_t n,
                                      size_t classes,
                                      double *raw,
                                      double *normalized);

// Sample Pearson correlation; `degenerate` is set when either input has
// (near) zero variance, in which case `r` is 0.
//
// # Safety
// `x` and `y` must hold `n` values; outputs must be writable.
enum ShapfedStatus shapfed_pearson(const double *x,
                                   const double *y,
                                   size_t n,
                                   double *r,
                                   bool *degenerate);

// Exact per-class Shapley values by enumerating all `2^n - 1` nonempty
// coalitions. `phi` receives the row-major `n x classes` result and
// `calls` (if non-null) the number of utility evaluations. With
// `workers != 1` the callback is invoked from several threads at once.
//
// # Safety
// `utility` must be safe to call with `user_data` (concurrently when
// `workers != 1`) and write `classes` values; `phi` must hold
// `n * classes` values.
enum ShapfedStatus shapfed_exact_shapley(size_t n,
                                         size_t classes,
                                         ShapfedUtilityFn utility,
                                         void *user_data,
                                         size_t workers,
                                         double *phi,
                                         size_t *calls);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHAPFED_H */
