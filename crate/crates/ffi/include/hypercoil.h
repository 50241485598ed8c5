#ifndef HYPERCOIL_H
#define HYPERCOIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum HcStatus {
  HC_STATUS_OK = 0,
  HC_STATUS_INVALID_ARGUMENT = 1,
  HC_STATUS_IO = 2,
  HC_STATUS_FORMAT = 3,
  HC_STATUS_NUMERICAL = 4,
  HC_STATUS_NULL_POINTER = 5,
  HC_STATUS_BUFFER_TOO_SMALL = 6,
  HC_STATUS_PANIC = 7,
} HcStatus;

/*
 Simulated dataset opened from its directory.
 */
typedef struct HcDataset HcDataset;

/*
 Trained model loaded from a checkpoint directory.
 */
typedef struct HcModel HcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or NULL. The pointer is
 valid until the next call into this library on the same thread.
 */
const char *hc_last_error(void);

/*
 Loads `checkpoint.json` and `weights.bin` from `dir`.

 # Safety
 `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HcStatus hc_model_load(const char *dir, struct HcModel **out);

/*
 Releases a model; NULL is ignored.

 # Safety
 `model` must come from [`hc_model_load`] and not be used afterwards.
 */
void hc_model_free(struct HcModel *model);

/*
 Number of learnable scalars in the model.

 # Safety
 `model` and `out` must be valid pointers.
 */
enum HcStatus hc_model_param_count(const struct HcModel *model, size_t *out);

/*
 Opens a dataset directory.

 # Safety
 `dir` must be a NUL-terminated string and `out` a valid pointer.
 */
enum HcStatus hc_dataset_load(const char *dir, struct HcDataset **out);

/*
 Releases a dataset; NULL is ignored.

 # Safety
 `data` must come from [`hc_dataset_load`] and not be used afterwards.
 */
void hc_dataset_free(struct HcDataset *data);

/*
 Sample count, image height and width and coil count. Any output pointer
 may be NULL.

 # Safety
 `data` must be a valid handle; non-null outputs must be writable.
 */
enum HcStatus hc_dataset_info(const struct HcDataset *data,
                              size_t *n_samples,
                              size_t *height,
                              size_t *width,
                              size_t *n_coils);

/*
 Reconstructs sample `index` with the coils selected by `task_bits`
 (e.g. `"111001010101"`), writing `height * width` interleaved re/im
 values into `out` (length `out_len` doubles, at least `2 * height * width`).
 `psnr_db` and `ssim_out` receive magnitude metrics against the reference
 image when non-null.

 # Safety
 Handles must be valid, `task_bits` NUL-terminated and `out` writable for
 `out_len` doubles.
 */
enum HcStatus hc_reconstruct_sample(const struct HcModel *model,
                                    const struct HcDataset *data,
                                    size_t index,
                                    const char *task_bits,
                                    double *out,
                                    size_t out_len,
                                    double *psnr_db,
                                    double *ssim_out);

/*
 Parses a `0`/`1` coil string into `out_bits` (one byte per coil) and
 stores the coil count in `n_coils`.

 # Safety
 `bits` must be NUL-terminated, `out_bits` writable for `capacity` bytes.
 */
enum HcStatus hc_parse_bitstring(const char *bits,
                                 uint8_t *out_bits,
                                 size_t capacity,
                                 size_t *n_coils);

/*
 Width of a task embedding.
 */
size_t hc_embed_width(void);

/*
 Fixed-width hypernetwork input for a coil string, padded with 1.0.

 # Safety
 `bits` must be NUL-terminated and `out` writable for
 [`hc_embed_width`] doubles.
 */
enum HcStatus hc_embed_task(const char *bits, double *out);

/*
 PSNR in dB of two row-major `h x w` images; +infinity when identical.

 # Safety
 `pred` and `gt` must hold `h * w` doubles; `out` must be writable.
 */
enum HcStatus hc_psnr(const double *pred,
                      const double *gt,
                      size_t h,
                      size_t w,
                      double data_range,
                      double *out);

/*
 Mean SSIM (11x11 Gaussian window) of two row-major images.

 # Safety
 `pred` and `gt` must hold `h * w` doubles; `out` must be writable.
 */
enum HcStatus hc_ssim(const double *pred,
                      const double *gt,
                      size_t h,
                      size_t w,
                      double data_range,
                      double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* HYPERCOIL_H */
