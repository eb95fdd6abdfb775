#ifndef NO2EST_H
#define NO2EST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum No2Status {
  NO2_STATUS_OK = 0,
  NO2_STATUS_NULL_POINTER = 1,
  NO2_STATUS_INVALID_INPUT = 2,
  NO2_STATUS_NUMERICAL = 3,
  NO2_STATUS_IO = 4,
  NO2_STATUS_PANIC = 5,
} No2Status;

/**
 * A fitted model ready for prediction.
 */
typedef struct No2Model No2Model;

/**
 * A road network already split into sub-segments.
 */
typedef struct No2Roads No2Roads;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *no2_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *no2_version(void);

/**
 * Loads a roads CSV and splits it into pieces of at most about `target_len`
 * meters.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum No2Status no2_roads_load(const char *path, double target_len, struct No2Roads **out);

/**
 * # Safety
 * `roads` must come from [`no2_roads_load`] or be null.
 */
void no2_roads_free(struct No2Roads *roads);

/**
 * Number of sub-segments in the network.
 *
 * # Safety
 * Pointers must be valid.
 */
enum No2Status no2_roads_len(const struct No2Roads *roads, size_t *out_len);

/**
 * Ring exposure at `(x, y)`. `boundaries` holds `n_boundaries` ascending
 * distances starting at 0; `out_w` receives `n_boundaries - 1` values
 * divided by `scale`.
 *
 * # Safety
 * Arrays must hold the stated number of elements.
 */
enum No2Status no2_exposure(const struct No2Roads *roads,
                            double x,
                            double y,
                            const double *boundaries,
                            size_t n_boundaries,
                            double scale,
                            double *out_w);

/**
 * Inverse-distance interpolation of one day's station values at `(x, y)`.
 * NaN entries in `values` mark stations without a value that day.
 *
 * # Safety
 * Arrays must hold `n` elements.
 */
enum No2Status no2_idw(const double *station_x,
                       const double *station_y,
                       const double *values,
                       size_t n,
                       double x,
                       double y,
                       double power,
                       double *out);

/**
 * Pooled OLS of `y` on `[1, x, w]`. `w` is row-major `n x k`. `out_coef` and
 * `out_se` receive `k + 2` values; `out_adj_r2` may be null.
 *
 * # Safety
 * Arrays must hold the stated number of elements.
 */
enum No2Status no2_fit_linear(const double *y,
                              const double *x,
                              const double *w,
                              size_t n,
                              size_t k,
                              double *out_coef,
                              double *out_se,
                              double *out_adj_r2);

/**
 * Loads a model from `fit.json`; spatial fits also need `draws.csv`
 * (`draws_csv` may be null otherwise).
 *
 * # Safety
 * Strings must be NUL-terminated and `out` valid.
 */
enum No2Status no2_model_load(const char *fit_json, const char *draws_csv, struct No2Model **out);

/**
 * # Safety
 * `model` must come from [`no2_model_load`] or be null.
 */
void no2_model_free(struct No2Model *model);

/**
 * Number of exposure covariates the model expects.
 *
 * # Safety
 * Pointers must be valid.
 */
enum No2Status no2_model_n_exposures(const struct No2Model *model, size_t *out);

/**
 * Daily prediction at a site. `site_id` may be null for a new site; pass
 * NaN coordinates when the location is unknown. `conditional` selects
 * kriged random intercepts at new sites (spatial models).
 *
 * # Safety
 * `w` must hold `k` elements; output pointers must be valid.
 */
enum No2Status no2_model_predict(const struct No2Model *model,
                                 const char *site_id,
                                 double x,
                                 double y,
                                 double idw_ppb,
                                 const double *w,
                                 size_t k,
                                 bool conditional,
                                 double *out_log,
                                 double *out_ppb);

/**
 * Runs every pipeline stage from a config file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string.
 */
enum No2Status no2_run_pipeline(const char *config_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NO2EST_H */
