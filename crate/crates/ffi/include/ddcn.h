#ifndef DDCN_H
#define DDCN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of an FFI call.
typedef enum DdcnStatus {
  DDCN_STATUS_OK = 0,
  // A required pointer argument was null.
  DDCN_STATUS_NULL_ARGUMENT = 1,
  // Bad configuration, shape or buffer length.
  DDCN_STATUS_INVALID_ARGUMENT = 2,
  // File could not be read or written.
  DDCN_STATUS_IO = 3,
  // File contents are malformed.
  DDCN_STATUS_FORMAT = 4,
  // A non-finite value was produced.
  DDCN_STATUS_NUMERIC = 5,
  // Internal panic; the handle involved should be considered unusable.
  DDCN_STATUS_PANIC = 6,
} DdcnStatus;

// Opaque dataset handle.
typedef struct DdcnDataset DdcnDataset;

// Opaque model handle.
typedef struct DdcnModel DdcnModel;

// Error metrics over all evaluated elements.
typedef struct DdcnMetrics {
  double rmse;
  double mae;
  // Percent; only meaningful when `mape_defined` is nonzero.
  double mape;
  uint8_t mape_defined;
  size_t n_evaluated;
  size_t n_masked;
} DdcnMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer stays
// valid until the next call into this library from the same thread.
const char *ddcn_last_error(void);

// Library version as a static NUL-terminated string.
const char *ddcn_version(void);

// Builds a freshly initialized model. `config_json` is a JSON model
// configuration; null selects the defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be a
// valid pointer.
enum DdcnStatus ddcn_model_new(const char *config_json, uint64_t seed, struct DdcnModel **out);

// Builds a model from `config_json` (null for defaults) and loads weights
// from a checkpoint file.
//
// # Safety
// String arguments must be null-terminated; `out` must be valid.
enum DdcnStatus ddcn_model_load(const char *config_json,
                                const char *checkpoint_path,
                                struct DdcnModel **out);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
enum DdcnStatus ddcn_model_save(const struct DdcnModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle not yet freed.
void ddcn_model_free(struct DdcnModel *model);

// # Safety
// `model` must be a live handle and `out` valid.
enum DdcnStatus ddcn_model_num_params(const struct DdcnModel *model, size_t *out);

// Writes the expected input shape `(B, T, C, H, W)` for `batch` into `shape[0..5]`.
//
// # Safety
// `model` must be a live handle; `shape` must point to 5 writable `size_t`.
enum DdcnStatus ddcn_model_input_shape(const struct DdcnModel *model, size_t batch, size_t *shape);

// Runs a forward pass on `batch` normalized windows. `input` holds
// `batch·T·C·H·W` floats and `output` receives `batch·C·H·W` floats.
//
// # Safety
// `model` must be a live handle; the buffers must hold the stated lengths.
enum DdcnStatus ddcn_model_predict(const struct DdcnModel *model,
                                   const float *input,
                                   size_t input_len,
                                   size_t batch,
                                   float *output,
                                   size_t output_len);

// Generates a synthetic dataset of `steps` frames on an `height × width` grid.
//
// # Safety
// `out` must be valid.
enum DdcnStatus ddcn_dataset_synth(size_t height,
                                   size_t width,
                                   size_t steps,
                                   uint64_t seed,
                                   struct DdcnDataset **out);

// # Safety
// `path` must be NUL-terminated; `out` valid.
enum DdcnStatus ddcn_dataset_load(const char *path, struct DdcnDataset **out);

// # Safety
// `dataset` must be a live handle; `path` NUL-terminated.
enum DdcnStatus ddcn_dataset_save(const struct DdcnDataset *dataset, const char *path);

// Writes `(steps, channels, height, width)` into `dims[0..4]`.
//
// # Safety
// `dataset` must be a live handle; `dims` must point to 4 writable `size_t`.
enum DdcnStatus ddcn_dataset_dims(const struct DdcnDataset *dataset, size_t *dims);

// Copies the raw frames, `steps·C·H·W` floats in `(T, C, H, W)` order.
//
// # Safety
// `dataset` must be a live handle; `out` must hold `len` floats.
enum DdcnStatus ddcn_dataset_frames(const struct DdcnDataset *dataset, float *out, size_t len);

// Releases a dataset. Null is ignored.
//
// # Safety
// `dataset` must be null or a handle not yet freed.
void ddcn_dataset_free(struct DdcnDataset *dataset);

// RMSE, MAE and MAPE of `pred` against `actual` (both `len` floats).
// Targets with `|y| <= mape_threshold` are left out of MAPE.
//
// # Safety
// Both buffers must hold `len` floats; `out` must be valid.
enum DdcnStatus ddcn_metrics(const float *pred,
                             const float *actual,
                             size_t len,
                             double mape_threshold,
                             struct DdcnMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDCN_H */
