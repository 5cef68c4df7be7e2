#ifndef AFTMED_H
#define AFTMED_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; edits will be overwritten. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AftmedLaw {
  AFTMED_LAW_NORMAL = 0,
  AFTMED_LAW_WEIBULL = 1,
} AftmedLaw;

/*
 Result codes shared by every fallible function.
 */
typedef enum AftmedStatus {
  AFTMED_STATUS_OK = 0,
  AFTMED_STATUS_NULL_POINTER = 1,
  AFTMED_STATUS_INVALID_ARGUMENT = 2,
  AFTMED_STATUS_DATA_ERROR = 3,
  AFTMED_STATUS_FIT_ERROR = 4,
  AFTMED_STATUS_NOT_CONVERGED = 5,
  AFTMED_STATUS_BUFFER_TOO_SMALL = 6,
  AFTMED_STATUS_PANIC = 7,
} AftmedStatus;

typedef enum AftmedTimeScale {
  /*
   Identity for normal, log for Weibull.
   */
  AFTMED_TIME_SCALE_DEFAULT = 0,
  AFTMED_TIME_SCALE_LOG = 1,
  AFTMED_TIME_SCALE_IDENTITY = 2,
} AftmedTimeScale;

/*
 Opaque dataset handle.
 */
typedef struct AftmedDataset AftmedDataset;

/*
 Opaque fitted-model handle.
 */
typedef struct AftmedFit AftmedFit;

/*
 Point estimates and standard errors; unavailable SEs are NaN.
 */
typedef struct AftmedEstimates {
  double nde;
  double nie_product;
  double nie_difference;
  double total_product;
  double total_difference;
  double se_nde;
  double se_nie_product;
  double se_nie_difference;
  double se_total_product;
  double se_total_difference;
  size_t bootstrap_dropped;
} AftmedEstimates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *aftmed_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *aftmed_version(void);

/*
 Reads a CSV file. `schema_toml` may be NULL for the default column names.

 # Safety
 `path` and a non-null `schema_toml` must be NUL-terminated strings, and
 `out` must be writable.
 */
enum AftmedStatus aftmed_dataset_read_csv(const char *path,
                                          const char *schema_toml,
                                          struct AftmedDataset **out);

/*
 Builds a dataset from parallel arrays of length `n`. A NaN `time2` marks
 right censoring at `time1`; `time1 == time2` is an exact event; otherwise
 the event lies in `(time1, time2)`.

 # Safety
 All four arrays must hold `n` readable values and `out` must be writable.
 */
enum AftmedStatus aftmed_dataset_from_arrays(size_t n,
                                             const double *time1,
                                             const double *time2,
                                             const double *exposure,
                                             const double *mediator,
                                             struct AftmedDataset **out);

/*
 Number of subjects, or 0 for a null handle.

 # Safety
 `dataset` must be null or a live handle.
 */
size_t aftmed_dataset_len(const struct AftmedDataset *dataset);

/*
 # Safety
 `dataset` must be null or a handle not yet freed.
 */
void aftmed_dataset_free(struct AftmedDataset *dataset);

/*
 Fits an AFT model. A fit that stops short of convergence is still
 returned through `out`, with status `NotConverged`.

 # Safety
 `dataset` must be a live handle and `out` writable.
 */
enum AftmedStatus aftmed_fit(const struct AftmedDataset *dataset,
                             enum AftmedLaw law,
                             enum AftmedTimeScale time_scale,
                             bool include_mediator,
                             struct AftmedFit **out);

/*
 Number of regression coefficients (excluding the log scale).

 # Safety
 `fit` must be null or a live handle.
 */
size_t aftmed_fit_num_coefficients(const struct AftmedFit *fit);

/*
 Copies the coefficients into `buf`, which must hold at least
 `aftmed_fit_num_coefficients` values.

 # Safety
 `fit` must be a live handle and `buf` must hold `len` writable values.
 */
enum AftmedStatus aftmed_fit_coefficients(const struct AftmedFit *fit, double *buf, size_t len);

/*
 Copies coefficient standard errors into `buf` (NaN when the information
 matrix could not be inverted).

 # Safety
 As for [`aftmed_fit_coefficients`].
 */
enum AftmedStatus aftmed_fit_std_errors(const struct AftmedFit *fit, double *buf, size_t len);

/*
 # Safety
 `fit` must be null or a live handle.
 */
double aftmed_fit_log_scale(const struct AftmedFit *fit);

/*
 # Safety
 `fit` must be null or a live handle.
 */
double aftmed_fit_loglik(const struct AftmedFit *fit);

/*
 # Safety
 `fit` must be null or a live handle.
 */
bool aftmed_fit_converged(const struct AftmedFit *fit);

/*
 # Safety
 `fit` must be null or a handle not yet freed.
 */
void aftmed_fit_free(struct AftmedFit *fit);

/*
 Runs the full mediation analysis. `bootstrap` of 0 skips the bootstrap;
 otherwise it must be at least 2.

 # Safety
 `dataset` must be a live handle and `out` writable.
 */
enum AftmedStatus aftmed_mediate(const struct AftmedDataset *dataset,
                                 enum AftmedLaw law,
                                 enum AftmedTimeScale time_scale,
                                 double a,
                                 double a_star,
                                 size_t bootstrap,
                                 uint64_t seed,
                                 struct AftmedEstimates *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AFTMED_H */
