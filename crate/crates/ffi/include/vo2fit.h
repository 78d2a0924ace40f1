#ifndef VO2FIT_H
#define VO2FIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum Vo2Status {
  VO2_STATUS_OK = 0,
  VO2_STATUS_NULL_POINTER = 1,
  VO2_STATUS_INVALID_ARGUMENT = 2,
  VO2_STATUS_IO = 3,
  VO2_STATUS_PARSE = 4,
  VO2_STATUS_LAYOUT_MISMATCH = 5,
  VO2_STATUS_UNSUPPORTED = 6,
  VO2_STATUS_METRIC = 7,
  VO2_STATUS_PANIC = 99,
} Vo2Status;

/**
 * Opaque handle to a loaded model bundle.
 */
typedef struct Vo2Bundle Vo2Bundle;

/**
 * Point metrics; `pearson` and `mape` are NaN when undefined.
 */
typedef struct Vo2RegressionMetrics {
  double rmse;
  double r2;
  double pearson;
  double mse;
  double mae;
  double std_mae;
  double mape;
} Vo2RegressionMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length in bytes,
 * excluding the terminator, so callers can size a retry.
 *
 * # Safety
 * `buf` must be null or valid for `len` writes.
 */
size_t vo2_last_error_message(char *buf, size_t len);

/**
 * NUL-terminated library version; static, do not free.
 */
const char *vo2_version(void);

/**
 * Load a bundle written by the vo2fit pipeline. On success `*out` owns a
 * handle that must be released with [`vo2_bundle_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for a write.
 */
enum Vo2Status vo2_bundle_load(const char *path, struct Vo2Bundle **out);

/**
 * # Safety
 * `bundle` must be null or a handle from [`vo2_bundle_load`] not yet freed.
 */
void vo2_bundle_free(struct Vo2Bundle *bundle);

/**
 * Number of raw features per input row.
 *
 * # Safety
 * `bundle` must be a live handle; `out` valid for a write.
 */
enum Vo2Status vo2_bundle_input_len(const struct Vo2Bundle *bundle, size_t *out);

/**
 * Width of the latent representation. `VO2_STATUS_UNSUPPORTED` for linear
 * and equation bundles.
 *
 * # Safety
 * `bundle` must be a live handle; `out` valid for a write.
 */
enum Vo2Status vo2_bundle_latent_dim(const struct Vo2Bundle *bundle, size_t *out);

/**
 * Predict for `n_rows` row-major raw feature rows of width `n_cols`,
 * writing `n_rows` values to `out`. Classifier bundles write probabilities.
 *
 * # Safety
 * `bundle` must be a live handle; `rows` valid for `n_rows * n_cols`
 * reads; `out` valid for `n_rows` writes.
 */
enum Vo2Status vo2_bundle_predict(const struct Vo2Bundle *bundle,
                                  const double *rows,
                                  size_t n_rows,
                                  size_t n_cols,
                                  double *out);

/**
 * Last-hidden-layer activations, row-major `n_rows * latent_dim`.
 *
 * # Safety
 * As for [`vo2_bundle_predict`], with `out` valid for
 * `n_rows * latent_dim` writes.
 */
enum Vo2Status vo2_bundle_latent(const struct Vo2Bundle *bundle,
                                 const double *rows,
                                 size_t n_rows,
                                 size_t n_cols,
                                 double *out);

/**
 * Heart-rate ratio estimate from age (years) and resting heart rate (bpm).
 *
 * # Safety
 * `out` must be valid for a write.
 */
enum Vo2Status vo2_equation_baseline(double age, double rhr, double *out);

/**
 * Sine/cosine encoding of a month in 1..=12.
 *
 * # Safety
 * `sin_out` and `cos_out` must be valid for a write.
 */
enum Vo2Status vo2_cyclical_month(uint32_t month, double *sin_out, double *cos_out);

/**
 * Area under the ROC curve; a nonzero label byte marks a positive.
 *
 * # Safety
 * `labels` and `scores` must be valid for `n` reads; `out` for a write.
 */
enum Vo2Status vo2_auroc(const uint8_t *labels, const double *scores, size_t n, double *out);

/**
 * # Safety
 * `y_true` and `y_pred` must be valid for `n` reads; `out` for a write.
 */
enum Vo2Status vo2_regression_metrics(const double *y_true,
                                      const double *y_pred,
                                      size_t n,
                                      struct Vo2RegressionMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VO2FIT_H */
