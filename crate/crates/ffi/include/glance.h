#ifndef GLANCE_H
#define GLANCE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of joints in the skeleton.
 */
#define GLANCE_JOINT_COUNT 24

/**
 * Length of one body-parameter vector: shape, pose, camera.
 */
#define GLANCE_PARAM_DIM 85

/**
 * Status codes; values 1 to 9 mirror the library's error kinds.
 */
typedef enum GlanceStatus {
  GLANCE_STATUS_OK = 0,
  GLANCE_STATUS_INVALID_INPUT = 1,
  GLANCE_STATUS_SHAPE_MISMATCH = 2,
  GLANCE_STATUS_DEGENERATE = 3,
  GLANCE_STATUS_NON_FINITE_LOSS = 4,
  GLANCE_STATUS_MISSING_DATASET = 5,
  GLANCE_STATUS_CONFIG = 6,
  GLANCE_STATUS_FORMAT = 7,
  GLANCE_STATUS_IO = 8,
  GLANCE_STATUS_JSON = 9,
  GLANCE_STATUS_NULL_POINTER = 20,
  GLANCE_STATUS_INVALID_UTF8 = 21,
  GLANCE_STATUS_PANIC = 22,
} GlanceStatus;

/**
 * Trained network loaded from a checkpoint.
 */
typedef struct GlanceModel GlanceModel;

/**
 * Standardized epsilon-SVR fitted on one target.
 */
typedef struct GlanceRegressor GlanceRegressor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *glance_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator, or 0 when the last call succeeded.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t glance_last_error(char *buf, size_t len);

/**
 * Loads a checkpoint archive into a new model handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum GlanceStatus glance_model_load(const char *path, struct GlanceModel **out);

/**
 * Creates a randomly initialized model from a JSON model configuration
 * (null for defaults).
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out` must be valid.
 */
enum GlanceStatus glance_model_new(const char *config_json,
                                   uint64_t seed,
                                   struct GlanceModel **out);

/**
 * Releases a model handle; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void glance_model_free(struct GlanceModel *model);

/**
 * Length of the per-frame spatio-temporal feature vector.
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t glance_model_feature_dim(const struct GlanceModel *model);

/**
 * Expected frame height and width.
 *
 * # Safety
 * `model` must be a live handle; `height` and `width` valid pointers.
 */
enum GlanceStatus glance_model_input_size(const struct GlanceModel *model,
                                          size_t *height,
                                          size_t *width);

/**
 * Predicts body parameters for every frame of a `t x h x w` C-order clip;
 * writes `t * GLANCE_PARAM_DIM` values to `out`.
 *
 * # Safety
 * `frames` must hold `t * h * w` floats and `out` room for
 * `t * GLANCE_PARAM_DIM` doubles.
 */
enum GlanceStatus glance_model_predict(const struct GlanceModel *model,
                                       const float *frames,
                                       size_t t,
                                       size_t h,
                                       size_t w,
                                       double *out);

/**
 * Last-frame spatio-temporal feature of a clip; writes
 * `glance_model_feature_dim` values to `out`.
 *
 * # Safety
 * As for `glance_model_predict`, with `out_len` doubles at `out`.
 */
enum GlanceStatus glance_model_sequence_feature(const struct GlanceModel *model,
                                                const float *frames,
                                                size_t t,
                                                size_t h,
                                                size_t w,
                                                double *out,
                                                size_t out_len);

/**
 * Root-aligned mean per-joint position error in millimeters between two
 * `GLANCE_JOINT_COUNT x 3` arrays in meters.
 *
 * # Safety
 * `pred` and `gt` must each hold `3 * GLANCE_JOINT_COUNT` doubles.
 */
enum GlanceStatus glance_mpjpe(const double *pred, const double *gt, double *out_mm);

/**
 * Procrustes-aligned mean per-joint position error in millimeters.
 *
 * # Safety
 * As for `glance_mpjpe`.
 */
enum GlanceStatus glance_pa_mpjpe(const double *pred, const double *gt, double *out_mm);

/**
 * Body mass index from kilograms and meters.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum GlanceStatus glance_bmi(double weight_kg, double height_m, double *out);

/**
 * Fits a regressor on `n` rows of `d` features (C order) and `n` targets.
 * `config_json` is null for defaults.
 *
 * # Safety
 * `x` must hold `n * d` doubles, `y` `n` doubles; `out` must be valid.
 */
enum GlanceStatus glance_regressor_fit(const double *x,
                                       size_t n,
                                       size_t d,
                                       const double *y,
                                       const char *config_json,
                                       struct GlanceRegressor **out);

/**
 * Predicts `n` targets from `n x d` features.
 *
 * # Safety
 * `reg` must be live; `x` must hold `n * d` doubles and `out` `n`.
 */
enum GlanceStatus glance_regressor_predict(const struct GlanceRegressor *reg,
                                           const double *x,
                                           size_t n,
                                           size_t d,
                                           double *out);

/**
 * Releases a regressor handle; null is ignored.
 *
 * # Safety
 * `reg` must be null or a handle from this library not yet freed.
 */
void glance_regressor_free(struct GlanceRegressor *reg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLANCE_H */
