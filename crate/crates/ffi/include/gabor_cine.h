#ifndef GABOR_CINE_H
#define GABOR_CINE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Carrier modulation of the fitted primitives.
 */
typedef enum GcMode {
  GC_MODE_GABOR = 0,
  GC_MODE_GAUSSIAN = 1,
} GcMode;

/**
 * Result code of every call.
 */
typedef enum GcStatus {
  GC_STATUS_OK = 0,
  GC_STATUS_INVALID_ARGUMENT = 1,
  GC_STATUS_NUMERICAL = 2,
  GC_STATUS_IO = 3,
  GC_STATUS_NULL_POINTER = 4,
  GC_STATUS_PANIC = 5,
} GcStatus;

/**
 * Opaque dataset handle.
 */
typedef struct GcDataset GcDataset;

/**
 * Opaque model handle.
 */
typedef struct GcModel GcModel;

/**
 * Fit settings exposed across the boundary; everything else keeps its
 * default.
 */
typedef struct GcFitConfig {
  enum GcMode mode;
  size_t n_init;
  size_t n_max;
  size_t rank_geom;
  size_t rank_contrast;
  size_t iters;
  double lambda_s;
  double lambda_t;
  uint64_t seed;
} GcFitConfig;

/**
 * Outcome of a fit. Image metrics are NaN when the dataset has no reference.
 */
typedef struct GcFitSummary {
  double final_data_loss;
  size_t final_count;
  double psnr_db;
  double ssim;
  double wall_time_s;
} GcFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *gc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gc_version(void);

struct GcFitConfig gc_fit_config_default(void);

/**
 * Reads a dataset container directory.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GcStatus gc_dataset_load(const char *path, struct GcDataset **out);

/**
 * Grid and acquisition sizes of a dataset. Any output pointer may be null.
 *
 * # Safety
 * `dataset` must come from [`gc_dataset_load`].
 */
enum GcStatus gc_dataset_dims(const struct GcDataset *dataset,
                              size_t *height,
                              size_t *width,
                              size_t *frames,
                              size_t *coils);

/**
 * # Safety
 * `dataset` must come from [`gc_dataset_load`] or be null.
 */
void gc_dataset_free(struct GcDataset *dataset);

/**
 * Fits a model. `summary` may be null.
 *
 * # Safety
 * Pointers must be valid; `out` must be writable.
 */
enum GcStatus gc_fit(const struct GcDataset *dataset,
                     const struct GcFitConfig *config,
                     struct GcModel **out,
                     struct GcFitSummary *summary);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GcStatus gc_model_load(const char *path, struct GcModel **out);

/**
 * # Safety
 * `model` must be a live handle; `path` a NUL-terminated string.
 */
enum GcStatus gc_model_save(const struct GcModel *model, const char *path);

/**
 * Training grid, frame count and primitive count. Any output pointer may be
 * null.
 *
 * # Safety
 * `model` must be a live handle.
 */
enum GcStatus gc_model_dims(const struct GcModel *model,
                            size_t *height,
                            size_t *width,
                            size_t *frames,
                            size_t *primitives);

/**
 * Renders frame `frame` on a `height x width` grid into row-major real and
 * imaginary buffers of length `len`, which must equal `height * width`.
 *
 * # Safety
 * `model` must be a live handle; both buffers must hold `len` doubles.
 */
enum GcStatus gc_model_render(const struct GcModel *model,
                              size_t frame,
                              size_t height,
                              size_t width,
                              double *re,
                              double *im,
                              size_t len);

/**
 * # Safety
 * `model` must be a live handle or null.
 */
void gc_model_free(struct GcModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GABOR_CINE_H */
