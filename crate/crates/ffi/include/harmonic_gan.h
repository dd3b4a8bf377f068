#ifndef HARMONIC_GAN_H
#define HARMONIC_GAN_H

/* Generated by cbindgen from crates/ffi; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HgStatus {
  HG_STATUS_OK = 0,
  HG_STATUS_NULL_ARGUMENT = 1,
  HG_STATUS_INVALID_ARGUMENT = 2,
  HG_STATUS_IO = 3,
  HG_STATUS_FORMAT = 4,
  HG_STATUS_CONFIG = 5,
  HG_STATUS_SHAPE = 6,
  HG_STATUS_NON_FINITE = 7,
  HG_STATUS_DIVERGED = 8,
  HG_STATUS_PANIC = 9,
} HgStatus;

typedef enum HgDirection {
  /**
   * A -> B.
   */
  HG_DIRECTION_AB = 0,
  /**
   * B -> A.
   */
  HG_DIRECTION_BA = 1,
} HgDirection;

/**
 * Trained generators loaded from a checkpoint.
 */
typedef struct HgModel HgModel;

/**
 * Pixel metrics of one image against its ground truth.
 */
typedef struct HgMetrics {
  double mae;
  double mse;
  double psnr;
  double ssim;
} HgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *hg_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *hg_last_error(void);

/**
 * Loads a checkpoint into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum HgStatus hg_model_load(const char *path, struct HgModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`hg_model_load`] and not be used afterwards.
 */
void hg_model_free(struct HgModel *model);

/**
 * Completed training steps of a model, 0 for null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint64_t hg_model_step(const struct HgModel *model);

/**
 * Translates one image; `output` receives the same number of bytes.
 * `direction` is an [`HgDirection`] value.
 *
 * # Safety
 * `input` and `output` must each hold `channels * height * width` bytes.
 */
enum HgStatus hg_translate(const struct HgModel *model,
                           int32_t direction,
                           size_t channels,
                           size_t height,
                           size_t width,
                           const uint8_t *input,
                           uint8_t *output);

/**
 * MAE, MSE, PSNR and SSIM of `image` against `truth`.
 *
 * # Safety
 * Both buffers must hold `channels * height * width` bytes; `out` must be writable.
 */
enum HgStatus hg_pair_metrics(const uint8_t *image,
                              const uint8_t *truth,
                              size_t channels,
                              size_t height,
                              size_t width,
                              struct HgMetrics *out);

/**
 * Writes the synthetic grayscale dataset to `out_dir`.
 *
 * # Safety
 * `out_dir` must be a NUL-terminated string.
 */
enum HgStatus hg_gen_data(const char *out_dir,
                          size_t n_train,
                          size_t n_test,
                          size_t size,
                          double lesion_prob,
                          uint64_t seed,
                          bool force);

/**
 * Trains on `data_dir` into `out_dir`; `config_path` may be null for defaults.
 *
 * # Safety
 * Non-null string arguments must be NUL-terminated.
 */
enum HgStatus hg_train(const char *data_dir, const char *config_path, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HARMONIC_GAN_H */
