#ifndef DEPTHAC_H
#define DEPTHAC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum AcdkStatus {
  ACDK_STATUS_OK = 0,
  ACDK_STATUS_NULL_POINTER = 1,
  ACDK_STATUS_INVALID_ARGUMENT = 2,
  ACDK_STATUS_IO = 3,
  ACDK_STATUS_FORMAT = 4,
  ACDK_STATUS_NUMERIC = 5,
  ACDK_STATUS_SHAPE = 6,
  ACDK_STATUS_CHECKPOINT = 7,
  ACDK_STATUS_PANIC = 8,
} AcdkStatus;

/**
 * Distance used by the SDR loss.
 */
typedef enum AcdkMetric {
  ACDK_METRIC_EUCLIDEAN = 0,
  ACDK_METRIC_MANHATTAN = 1,
} AcdkMetric;

/**
 * Opaque model handle.
 */
typedef struct AcdkModel AcdkModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failing call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *depthac_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *depthac_version(void);

/**
 * Fresh model for 1- or 3-channel input, deterministic in `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum AcdkStatus depthac_model_init(uint64_t seed, uint32_t channels, struct AcdkModel **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum AcdkStatus depthac_model_load(const char *path, struct AcdkModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` must be nul-terminated.
 */
enum AcdkStatus depthac_model_save(const struct AcdkModel *model, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void depthac_model_free(struct AcdkModel *model);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t depthac_model_param_count(const struct AcdkModel *model);

/**
 * Input channel count, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t depthac_model_input_channels(const struct AcdkModel *model);

/**
 * Disparity for an `height x width x channels` image in `[0, 1]`.
 * `out` receives `height * width` values.
 *
 * # Safety
 * Buffers must hold the stated number of elements.
 */
enum AcdkStatus depthac_model_predict(const struct AcdkModel *model,
                                      const double *pixels,
                                      size_t height,
                                      size_t width,
                                      size_t channels,
                                      double *out);

/**
 * Applies the corruption named by `kind` (e.g. `"fog"`) at `severity`
 * 1..5. `out` receives as many values as `pixels`.
 *
 * # Safety
 * `kind` must be nul-terminated; buffers must hold the stated sizes.
 */
enum AcdkStatus depthac_corrupt(const char *kind,
                                uint8_t severity,
                                uint64_t seed,
                                const double *pixels,
                                size_t height,
                                size_t width,
                                size_t channels,
                                double *out);

/**
 * Affine-invariant L1 loss between two length-`n` maps. `grad_pred` may
 * be null; otherwise it receives `n` values.
 *
 * # Safety
 * Non-null buffers must hold `n` elements.
 */
enum AcdkStatus depthac_affine_loss(const double *pred,
                                    const double *target,
                                    size_t n,
                                    double *value,
                                    double *grad_pred);

/**
 * SDR loss of `student` against `reference` (both `height x width`,
 * non-negative) with square patches of side `patch`. `grad` may be null.
 *
 * # Safety
 * Non-null buffers must hold `height * width` elements.
 */
enum AcdkStatus depthac_sdr_loss(const double *student,
                                 const double *reference,
                                 size_t height,
                                 size_t width,
                                 size_t patch,
                                 enum AcdkMetric metric,
                                 double *value,
                                 double *grad);

/**
 * AbsRel and δ1 of `pred` against `gt` after least-squares scale-shift
 * alignment over pixels with positive ground truth.
 *
 * # Safety
 * Buffers must hold `height * width` elements; outputs must be writable.
 */
enum AcdkStatus depthac_metrics(const double *pred,
                                const double *gt,
                                size_t height,
                                size_t width,
                                double *out_absrel,
                                double *out_delta1);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHAC_H */
