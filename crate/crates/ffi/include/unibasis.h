#ifndef UNIBASIS_H
#define UNIBASIS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UbStatus {
  UB_STATUS_OK = 0,
  // Invalid arguments or configuration.
  UB_STATUS_USAGE = 1,
  // Unreadable or inconsistent input data.
  UB_STATUS_DATA = 2,
  // Numerical breakdown.
  UB_STATUS_NUMERICAL = 3,
  // A required pointer was null.
  UB_STATUS_NULL_POINTER = 4,
  // A caller-supplied buffer is too small.
  UB_STATUS_BUFFER_TOO_SMALL = 5,
  // Internal panic caught at the boundary.
  UB_STATUS_INTERNAL = 6,
} UbStatus;

// Row-major dense matrix.
typedef struct UbMatrix UbMatrix;

typedef struct UbModel UbModel;

typedef struct UbTammes UbTammes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next call on this thread.
const char *ub_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ub_version(void);

// Orthonormal `dim x dim` matrix from `dim*(dim-1)/2` strict-upper-triangle parameters (row-major).
//
// # Safety
// `theta` must point to `len` doubles; `out` must be writable.
enum UbStatus ub_cayley(const double *theta, size_t len, size_t dim, struct UbMatrix **out);

// # Safety
// `m` must be a live matrix handle; `rows` and `cols` writable.
enum UbStatus ub_matrix_shape(const struct UbMatrix *m, size_t *rows, size_t *cols);

// Copies the row-major entries into `buf`, which must hold `rows * cols` doubles.
//
// # Safety
// `m` must be a live matrix handle; `buf` must point to `len` writable doubles.
enum UbStatus ub_matrix_copy(const struct UbMatrix *m, double *buf, size_t len);

// # Safety
// `m` must be null or a handle not yet freed.
void ub_matrix_free(struct UbMatrix *m);

// Inactive-classifier thresholds for `detectors` detectors; writes `detectors` values to `out`.
//
// # Safety
// `alpha` and `omega` must point to `partitions` doubles; `out` to `detectors` writable doubles.
enum UbStatus ub_partition_thresholds(size_t detectors,
                                      const double *alpha,
                                      const double *omega,
                                      size_t partitions,
                                      double tau,
                                      double gamma,
                                      double *out);

// Sum of clamped per-detector scores.
//
// # Safety
// `scores` must point to `n` doubles; `out` writable.
enum UbStatus ub_score1(const double *scores, size_t n, double *out);

// Sum over distinct labels of the best score carrying that label.
//
// # Safety
// `scores` and `labels` must point to `n` elements; `out` writable.
enum UbStatus ub_score2(const double *scores, const uint32_t *labels, size_t n, double *out);

// Trains on the train split of a feature manifest.
//
// `config_toml` is a run configuration whose `[train]` table is used; null means defaults.
//
// # Safety
// Strings must be NUL-terminated; `out` writable.
enum UbStatus ub_train(const char *features_manifest,
                       const char *config_toml,
                       struct UbModel **out);

// # Safety
// `dir` must be NUL-terminated; `out` writable.
enum UbStatus ub_model_load(const char *dir, struct UbModel **out);

// # Safety
// `model` must be a live handle; `dir` NUL-terminated.
enum UbStatus ub_model_save(const struct UbModel *model, const char *dir);

// Layer dimension, detector count, shared standardized bias and margin parameter.
//
// # Safety
// `model` must be a live handle; every output pointer writable.
enum UbStatus ub_model_info(const struct UbModel *model,
                            size_t *dim,
                            size_t *detectors,
                            double *b,
                            double *t);

// Detector directions as a `detectors x dim` matrix.
//
// # Safety
// `model` must be a live handle; `out` writable.
enum UbStatus ub_model_directions(const struct UbModel *model, struct UbMatrix **out);

// # Safety
// `model` must be null or a handle not yet freed.
void ub_model_free(struct UbModel *model);

// Spreads `count` unit vectors in `dim` dimensions; `iterations == 0` uses the default budget.
//
// # Safety
// `out` writable.
enum UbStatus ub_tammes_solve(size_t count,
                              size_t dim,
                              uint64_t seed,
                              size_t iterations,
                              struct UbTammes **out);

// Pairwise angle statistics in degrees.
//
// # Safety
// `h` must be a live handle; outputs writable.
enum UbStatus ub_tammes_stats(const struct UbTammes *h,
                              double *min,
                              double *max,
                              double *mean,
                              double *std);

// Unit vectors as a `count x dim` matrix.
//
// # Safety
// `h` must be a live handle; `out` writable.
enum UbStatus ub_tammes_vectors(const struct UbTammes *h, struct UbMatrix **out);

// # Safety
// `h` must be null or a handle not yet freed.
void ub_tammes_free(struct UbTammes *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNIBASIS_H */
