#ifndef TRAJFLOW_H
#define TRAJFLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_ARGUMENT = 2,
  TF_STATUS_CONFIG = 3,
  TF_STATUS_DATA = 4,
  TF_STATUS_NUMERIC = 5,
  TF_STATUS_VERSION = 6,
  TF_STATUS_IO = 7,
  TF_STATUS_PANIC = 8,
} TfStatus;

/**
 * Opaque loaded model.
 */
typedef struct TfModel TfModel;

/**
 * Grid extent and resolution, mirroring the library's grid spec.
 */
typedef struct {
  double x_min;
  double x_max;
  double y_min;
  double y_max;
  uintptr_t resolution;
} TfGridSpec;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Most recent error message on this thread, or null. Valid until the next
 * failing call on the same thread.
 */
const char *tf_last_error_message(void);

/**
 * Load a JSON checkpoint. `*out` receives a handle to free with
 * [`tf_model_free`].
 *
 * # Safety
 * `path` must be a valid nul-terminated string and `out` writable.
 */
TfStatus tf_model_load(const char *path, TfModel **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `model` must come from [`tf_model_load`] and not be used afterwards.
 */
void tf_model_free(TfModel *model);

/**
 * Forecast horizon `S` in steps.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
TfStatus tf_model_horizon(const TfModel *model, uintptr_t *out);

/**
 * 1 for a marginal model, 0 for a joint one.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
TfStatus tf_model_is_marginal(const TfModel *model, int32_t *out);

/**
 * World-space log-density at `n_query` points, forecast time `s ∈ (0, S]`.
 *
 * # Safety
 * `obs_xy` holds `2·n_obs` values, `query_xy` holds `2·n_query` and `out`
 * has room for `n_query`.
 */
TfStatus tf_model_log_prob(const TfModel *model,
                           const double *obs_xy,
                           uintptr_t n_obs,
                           double frame_period,
                           const double *query_xy,
                           uintptr_t n_query,
                           double s,
                           double *out);

/**
 * `n` world-space samples at forecast time `s`, written as `2·n` values.
 *
 * # Safety
 * `obs_xy` holds `2·n_obs` values and `out_xy` has room for `2·n`.
 */
TfStatus tf_model_sample(const TfModel *model,
                         const double *obs_xy,
                         uintptr_t n_obs,
                         double frame_period,
                         double s,
                         uintptr_t n,
                         uint64_t seed,
                         double *out_xy);

/**
 * Occupancy over a grid, `resolution²` values, row 0 at the lowest `y`.
 * With `oversample == 0` this is the density at time `s`; otherwise it is
 * the fused grid over the whole horizon and `s` is ignored.
 *
 * # Safety
 * `obs_xy` holds `2·n_obs` values and `out` has room for `resolution²`.
 */
TfStatus tf_model_grid(const TfModel *model,
                       const double *obs_xy,
                       uintptr_t n_obs,
                       double frame_period,
                       TfGridSpec spec,
                       double s,
                       uintptr_t oversample,
                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRAJFLOW_H */
