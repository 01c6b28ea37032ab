#ifndef GENLI_H
#define GENLI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2, 3 and 4 match the command-line exit codes.
typedef enum GenliStatus {
  GENLI_STATUS_OK = 0,
  GENLI_STATUS_NULL_POINTER = 1,
  GENLI_STATUS_CONFIG = 2,
  GENLI_STATUS_DATA = 3,
  GENLI_STATUS_NUMERICAL = 4,
  GENLI_STATUS_IO = 5,
  GENLI_STATUS_STATE = 6,
  GENLI_STATUS_UNDEFINED_METRIC = 7,
  GENLI_STATUS_BUFFER_TOO_SMALL = 8,
  GENLI_STATUS_PANIC = 9,
} GenliStatus;

// Opaque handle to a loaded model.
typedef struct GenliModel GenliModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Loads the output directory of `genli train`. On success `*out` owns a
// handle that must be released with [`genli_model_free`].
//
// # Safety
// `dir` must be a NUL-terminated UTF-8 path and `out` a writable pointer.
enum GenliStatus genli_model_load(const char *dir, struct GenliModel **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must be null or a handle from [`genli_model_load`] not yet freed.
void genli_model_free(struct GenliModel *model);

// Distribution size N of the model.
//
// # Safety
// `model` must be a live handle and `out` writable.
enum GenliStatus genli_model_buckets(const struct GenliModel *model, size_t *out);

// Click probabilities of `n_targets` candidates for one user history.
//
// # Safety
// Histories hold `history_len` values, targets and `out` hold `n_targets`.
enum GenliStatus genli_predict(const struct GenliModel *model,
                               const uint32_t *history_items,
                               const uint32_t *history_categories,
                               size_t history_len,
                               const uint32_t *target_items,
                               const uint32_t *target_categories,
                               size_t n_targets,
                               double *out);

// Writes the implicit, explicit and relative distributions of a history,
// each of length N, back to back into `out` (capacity `out_len >= 3N`).
// A distribution the model variant does not generate is written as uniform.
//
// # Safety
// Histories hold `history_len` values and `out` holds `out_len`.
enum GenliStatus genli_distributions(const struct GenliModel *model,
                                     const uint32_t *history_items,
                                     const uint32_t *history_categories,
                                     size_t history_len,
                                     double *out,
                                     size_t out_len);

// Bucket of `id` in a distribution of size `n`.
//
// # Safety
// `out` must be writable.
enum GenliStatus genli_bucket(size_t n, uint32_t id, size_t *out);

// Score of each of `len` item ids looked up in distribution `probs` of size `n`.
//
// # Safety
// `probs` holds `n` values, `ids` and `out` hold `len`.
enum GenliStatus genli_lookup(const double *probs,
                              size_t n,
                              const uint32_t *ids,
                              size_t len,
                              double *out);

// Positions of the `k` highest scores, best first. Ties go to the lower
// position. Writes `min(k, len)` positions and stores that count in `*written`.
//
// # Safety
// `scores` holds `len` values, `positions` holds `k`, `written` is writable.
enum GenliStatus genli_topk(const double *scores,
                            size_t len,
                            size_t k,
                            size_t *positions,
                            size_t *written);

// Rank-sum AUC; labels are 0 or 1.
//
// # Safety
// `scores` and `labels` hold `len` values and `out` is writable.
enum GenliStatus genli_auc(const double *scores, const uint8_t *labels, size_t len, double *out);

// Message of the last failed call on this thread; empty if none. Valid
// until the next failing call on the same thread.
const char *genli_last_error(void);

// Library version, NUL-terminated and static.
const char *genli_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GENLI_H */
