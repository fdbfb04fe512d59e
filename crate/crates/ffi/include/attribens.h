#ifndef ATTRIBENS_H
#define ATTRIBENS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AttribensStatus {
  ATTRIBENS_STATUS_OK = 0,
  ATTRIBENS_STATUS_NULL_POINTER = 1,
  ATTRIBENS_STATUS_INVALID_ARGUMENT = 2,
  ATTRIBENS_STATUS_CAPACITY = 3,
  ATTRIBENS_STATUS_FORMAT = 4,
  ATTRIBENS_STATUS_IO = 5,
  ATTRIBENS_STATUS_BUFFER_TOO_SMALL = 6,
  ATTRIBENS_STATUS_INTERNAL = 7,
} AttribensStatus;

/**
 * Opaque codebook handle.
 */
typedef struct AttribensCodebook AttribensCodebook;

/**
 * Opaque trained-ensemble handle.
 */
typedef struct AttribensEnsemble AttribensEnsemble;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *attribens_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *attribens_version(void);

/**
 * Smallest `(n, h = n/2)` whose capacity covers `num_groups` (twice that
 * when `doubled`).
 *
 * # Safety
 * `out_n` and `out_h` must be valid for writes.
 */
enum AttribensStatus attribens_min_code_params(size_t num_groups,
                                               bool doubled,
                                               size_t *out_n,
                                               size_t *out_h);

/**
 * Draws distinct weight-`h` codes for `num_groups` single-item groups.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum AttribensStatus attribens_codebook_assign(size_t num_groups,
                                               size_t n,
                                               size_t h,
                                               uint64_t seed,
                                               struct AttribensCodebook **out);

/**
 * Parses a codebook manifest.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum AttribensStatus attribens_codebook_from_json(const char *json, struct AttribensCodebook **out);

/**
 * Code length `n`, or 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live codebook handle.
 */
size_t attribens_codebook_n(const struct AttribensCodebook *cb);

/**
 * Code weight `h`, or 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live codebook handle.
 */
size_t attribens_codebook_h(const struct AttribensCodebook *cb);

/**
 * Number of code groups, or 0 for a null handle.
 *
 * # Safety
 * `cb` must be null or a live codebook handle.
 */
size_t attribens_codebook_num_groups(const struct AttribensCodebook *cb);

/**
 * Writes the `n` ensemble weights with `group` ablated; a negative group
 * gives the uniform weights.
 *
 * # Safety
 * `cb` must be a live handle and `out` valid for `len` writes.
 */
enum AttribensStatus attribens_codebook_weight_vector(const struct AttribensCodebook *cb,
                                                      int64_t group,
                                                      double *out,
                                                      size_t len);

/**
 * Checks that every ablation keeps a model for every other group.
 *
 * # Safety
 * `cb` must be a live handle and `covered` valid for writes.
 */
enum AttribensStatus attribens_codebook_verify_coverage(const struct AttribensCodebook *cb,
                                                        bool *covered);

/**
 * # Safety
 * `cb` must be null or a handle not yet freed.
 */
void attribens_codebook_free(struct AttribensCodebook *cb);

/**
 * Loads a trained ensemble from a run manifest, verifying file digests.
 *
 * # Safety
 * `manifest_path` must be a NUL-terminated string; `out` valid for writes.
 */
enum AttribensStatus attribens_ensemble_load(const char *manifest_path,
                                             struct AttribensEnsemble **out);

/**
 * Member count, or 0 for a null handle.
 *
 * # Safety
 * `ens` must be null or a live ensemble handle.
 */
size_t attribens_ensemble_len(const struct AttribensEnsemble *ens);

/**
 * Flattened sample dimension, or 0 for a null handle.
 *
 * # Safety
 * `ens` must be null or a live ensemble handle.
 */
size_t attribens_ensemble_sample_dim(const struct AttribensEnsemble *ens);

/**
 * Generates the sample for noise `(seed, stream_id)` under `weights`.
 *
 * # Safety
 * `ens` must be a live handle, `weights` readable for `num_weights` values
 * and `out` writable for `len` values.
 */
enum AttribensStatus attribens_ensemble_generate(const struct AttribensEnsemble *ens,
                                                 const double *weights,
                                                 size_t num_weights,
                                                 uint64_t seed,
                                                 uint64_t stream_id,
                                                 double *out,
                                                 size_t len);

/**
 * Regenerates noise `(seed, stream_id)` with `group` ablated.
 *
 * # Safety
 * `ens` must be a live handle and `out` writable for `len` values.
 */
enum AttribensStatus attribens_ensemble_counterfactual(const struct AttribensEnsemble *ens,
                                                       size_t group,
                                                       uint64_t seed,
                                                       uint64_t stream_id,
                                                       double *out,
                                                       size_t len);

/**
 * Writes the `sample_dim × len(ens)` Jacobian, row-major.
 *
 * # Safety
 * `ens` must be a live handle and `out` writable for `len` values.
 */
enum AttribensStatus attribens_ensemble_jacobian(const struct AttribensEnsemble *ens,
                                                 uint64_t seed,
                                                 uint64_t stream_id,
                                                 double *out,
                                                 size_t len);

/**
 * # Safety
 * `ens` must be null or a handle not yet freed.
 */
void attribens_ensemble_free(struct AttribensEnsemble *ens);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTRIBENS_H */
