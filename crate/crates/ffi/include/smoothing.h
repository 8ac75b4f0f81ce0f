#ifndef SMOOTHING_H
#define SMOOTHING_H

/* Generated by cbindgen from smoothing-ffi. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum SmStatus {
  SM_STATUS_OK = 0,
  SM_STATUS_NULL_POINTER = 1,
  SM_STATUS_INVALID_UTF8 = 2,
  SM_STATUS_INVALID_MODEL = 3,
  SM_STATUS_INVALID_ARGUMENT = 4,
  SM_STATUS_REGIME_MISMATCH = 5,
  /**
   * A numerical routine failed: no convergence, too few samples, etc.
   */
  SM_STATUS_NUMERICAL = 6,
  SM_STATUS_IO = 7,
  SM_STATUS_PANIC = 8,
} SmStatus;

/**
 * Opaque Laplace fixed-point result.
 */
typedef struct SmGrid SmGrid;

/**
 * Opaque model handle.
 */
typedef struct SmModel SmModel;

/**
 * Pruning of the simulated tree.
 */
typedef struct SmPrunePolicy {
  double weight_floor;
  uint32_t depth_cap;
  uint64_t node_cap;
  double censor_pruned_weight;
} SmPrunePolicy;

typedef struct SmTreeSample {
  double r_value;
  double pruned_weight;
  double max_weight;
  uint64_t nodes_expanded;
  bool capped;
  bool censored;
} SmTreeSample;

typedef struct SmEstimate {
  double value;
  double std_error;
} SmEstimate;

/**
 * Settings for the Laplace fixed point. `alpha` is NaN to take the
 * exponent from the model; `workers` 0 means all cores.
 */
typedef struct SmFixpointOptions {
  double alpha;
  uint64_t pool_size;
  uint64_t seed;
  double t_min;
  double t_max;
  uint32_t points_per_decade;
  double tol;
  uint32_t max_iter;
  uint32_t workers;
} SmFixpointOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sm_last_error(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void sm_string_free(char *s);

/**
 * Parses a model from JSON and validates it.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out_model` must be writable.
 */
enum SmStatus sm_model_from_json(const char *json, struct SmModel **out_model);

/**
 * # Safety
 * `model` must be null or a handle from [`sm_model_from_json`] not yet freed.
 */
void sm_model_free(struct SmModel *model);

/**
 * `m(s) = E[sum A_i^s]` from the closed form.
 *
 * # Safety
 * `model` must be a live handle; `out_value` must be writable.
 */
enum SmStatus sm_mellin(const struct SmModel *model, double s, double *out_value);

/**
 * Root analysis of `m(s) = 1` as a JSON document; free with
 * [`sm_string_free`].
 *
 * # Safety
 * `model` must be a live handle; `out_json` must be writable.
 */
enum SmStatus sm_analyze(const struct SmModel *model, uint64_t seed, char **out_json);

/**
 * Tail exponent `alpha` of the model, when the regime defines one.
 *
 * # Safety
 * `model` must be a live handle; `out_alpha` must be writable.
 */
enum SmStatus sm_alpha(const struct SmModel *model, double *out_alpha);

/**
 * Draws sample `index` of the minimal solution `R` from stream `seed`.
 *
 * # Safety
 * `model` and `policy` must be valid; `out_sample` must be writable.
 */
enum SmStatus sm_sample_r(const struct SmModel *model,
                          const struct SmPrunePolicy *policy,
                          uint64_t seed,
                          uint64_t index,
                          struct SmTreeSample *out_sample);

/**
 * Average of `t^alpha P[X > t]` over a log grid on `[lo, hi]`.
 *
 * # Safety
 * `samples` must point to `n` readable doubles; `out_estimate` must be
 * writable.
 */
enum SmStatus sm_estimate_c_plus(const double *samples,
                                 size_t n,
                                 double alpha,
                                 double lo,
                                 double hi,
                                 struct SmEstimate *out_estimate);

/**
 * Default fixed-point settings.
 */
struct SmFixpointOptions sm_fixpoint_options_default(void);

/**
 * Solves the Laplace-transform fixed point on a grid. For critical models
 * the pool is calibrated and the tail constant is computed; otherwise it
 * is NaN.
 *
 * # Safety
 * `model` and `options` must be valid; `out_grid` must be writable.
 */
enum SmStatus sm_laplace_fixpoint(const struct SmModel *model,
                                  const struct SmFixpointOptions *options,
                                  struct SmGrid **out_grid);

/**
 * Number of grid points; 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t sm_grid_len(const struct SmGrid *grid);

/**
 * Grid abscissae, `sm_grid_len` values owned by the handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
const double *sm_grid_t(const struct SmGrid *grid);

/**
 * `phi(t)` on the grid, owned by the handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
const double *sm_grid_phi(const struct SmGrid *grid);

/**
 * `1 - phi(t)` on the grid, owned by the handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
const double *sm_grid_one_minus_phi(const struct SmGrid *grid);

/**
 * Tail constant from the fixed point; NaN when the model is not critical.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
double sm_grid_c_tail(const struct SmGrid *grid);

/**
 * Iterations used; 0 for a null handle.
 *
 * # Safety
 * `grid` must be null or a live handle.
 */
size_t sm_grid_iterations(const struct SmGrid *grid);

/**
 * # Safety
 * `grid` must be null or a handle from [`sm_laplace_fixpoint`] not yet freed.
 */
void sm_grid_free(struct SmGrid *grid);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SMOOTHING_H */
