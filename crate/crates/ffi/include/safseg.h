#ifndef SAFSEG_H
#define SAFSEG_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of the C interface.
 */
typedef enum SafsegStatus {
  SAFSEG_STATUS_OK = 0,
  SAFSEG_STATUS_NULL_POINTER = 1,
  SAFSEG_STATUS_INVALID_ARGUMENT = 2,
  SAFSEG_STATUS_SHAPE = 3,
  SAFSEG_STATUS_CONFIG = 4,
  SAFSEG_STATUS_FORMAT = 5,
  SAFSEG_STATUS_NUMERICAL = 6,
  SAFSEG_STATUS_MISSING = 7,
  SAFSEG_STATUS_IO = 8,
  SAFSEG_STATUS_PANIC = 9,
} SafsegStatus;

/**
 * Opaque float32 network.
 */
typedef struct SafsegModel SafsegModel;

typedef struct SafsegCounts {
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
} SafsegCounts;

typedef struct SafsegMetrics {
  double sp;
  double pc;
  double rc;
  double dc;
  double js;
} SafsegMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t safseg_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *safseg_version(void);

/**
 * Builds a freshly initialised U-Net style network with every skip
 * connection and single-scale output.
 *
 * # Safety
 * `out` must be valid for writing a pointer.
 */
enum SafsegStatus safseg_model_new(size_t input_size,
                                   size_t depth,
                                   size_t width,
                                   uint64_t seed,
                                   struct SafsegModel **out);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writing.
 */
enum SafsegStatus safseg_model_load(const char *path, struct SafsegModel **out);

/**
 * Writes a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum SafsegStatus safseg_model_save(const struct SafsegModel *model, const char *path);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void safseg_model_free(struct SafsegModel *model);

/**
 * Network input height and width.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SafsegStatus safseg_model_input_size(const struct SafsegModel *model,
                                          size_t *height,
                                          size_t *width);

/**
 * Number of trainable scalars.
 *
 * # Safety
 * All pointers must be valid.
 */
enum SafsegStatus safseg_model_param_count(const struct SafsegModel *model, size_t *count);

/**
 * Tumour probabilities for `batch` images in `[B, 3, H, W]` layout.
 * `probs` receives `batch * H * W` values.
 *
 * # Safety
 * `image` must hold `batch * 3 * height * width` floats and `probs`
 * `batch * height * width`.
 */
enum SafsegStatus safseg_model_predict(const struct SafsegModel *model,
                                       const float *image,
                                       size_t batch,
                                       size_t height,
                                       size_t width,
                                       float *probs);

/**
 * Pixel confusion counts of two binary masks.
 *
 * # Safety
 * `pred` and `truth` must hold `len` bytes; `out` must be valid.
 */
enum SafsegStatus safseg_confusion(const uint8_t *pred,
                                   const uint8_t *truth,
                                   size_t len,
                                   struct SafsegCounts *out);

/**
 * Specificity, precision, recall, Dice and Jaccard of confusion counts.
 *
 * # Safety
 * `counts` and `out` must be valid.
 */
enum SafsegStatus safseg_metrics(const struct SafsegCounts *counts, struct SafsegMetrics *out);

/**
 * Mean clipped Jaccard over `n` slides.
 *
 * # Safety
 * `js` must hold `n` values; `out` must be valid.
 */
enum SafsegStatus safseg_s_wsi(const double *js, size_t n, double threshold, double *out);

/**
 * Mean SSIM over all 11x11 uniform windows of two `height x width` maps.
 *
 * # Safety
 * `x` and `y` must hold `height * width` values; `out` must be valid.
 */
enum SafsegStatus safseg_ssim(const double *x,
                              const double *y,
                              size_t height,
                              size_t width,
                              double *out);

/**
 * Number of patches covering a `height x width` raster.
 *
 * # Safety
 * `out` must be valid.
 */
enum SafsegStatus safseg_grid_count(size_t height,
                                    size_t width,
                                    size_t patch,
                                    size_t overlap,
                                    size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAFSEG_H */
