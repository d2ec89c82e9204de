/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef LATTE_H
#define LATTE_H

#include <stddef.h>
#include <stdint.h>

/*
 Result of every call. Zero is success.
 */
typedef enum LatteStatus {
  LATTE_STATUS_OK = 0,
  LATTE_STATUS_NULL_ARGUMENT = 1,
  LATTE_STATUS_CONFIG = 2,
  LATTE_STATUS_DIMENSION = 3,
  LATTE_STATUS_CONTRACT = 4,
  LATTE_STATUS_PARSE = 5,
  LATTE_STATUS_IO = 6,
  LATTE_STATUS_NUMERIC = 7,
  LATTE_STATUS_DOMAIN = 8,
  LATTE_STATUS_UNDEFINED_METRIC = 9,
  LATTE_STATUS_PANIC = 10,
} LatteStatus;

/*
 CRPS-Sum normalization selector for [`latte_crps_sum`].
 */
typedef enum LatteCrpsSumMode {
  /*
   Divided by the mean absolute realized sum.
   */
  LATTE_CRPS_SUM_MODE_NORMALIZED = 0,
  LATTE_CRPS_SUM_MODE_RAW = 1,
} LatteCrpsSumMode;

/*
 A trained model together with the normalization of its inputs.
 */
typedef struct LatteHandle LatteHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message describing the last failure on this thread, or NULL. The pointer
 stays valid until the next call into the library from the same thread.
 */
const char *latte_last_error(void);

/*
 Loads a checkpoint written by `latte train`. Release with [`latte_model_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LatteStatus latte_model_load(const char *path, struct LatteHandle **out);

/*
 # Safety
 `handle` must come from [`latte_model_load`] and not be used afterwards.
 */
void latte_model_free(struct LatteHandle *handle);

/*
 Writes series count, latent dimension, context length and horizon. Any
 output pointer may be NULL.

 # Safety
 `handle` must be a live handle; non-NULL outputs must be valid.
 */
enum LatteStatus latte_model_dims(const struct LatteHandle *handle,
                                  size_t *num_series,
                                  size_t *latent_dim,
                                  size_t *context_len,
                                  size_t *horizon);

/*
 Samples `samples` forecast paths of `horizon` steps. `context` is
 `[rows, N]` in original units (the last context-length rows are used);
 `out` receives `[samples, horizon, N]` in original units.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum LatteStatus latte_model_forecast(const struct LatteHandle *handle,
                                      const double *context,
                                      size_t context_len,
                                      size_t horizon,
                                      size_t samples,
                                      uint64_t seed,
                                      double *out,
                                      size_t out_len);

/*
 Latent code of every row of `values` (`[rows, N]`, original units, no
 missing cells); `out` receives `[rows, D]`.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum LatteStatus latte_model_export_latent(const struct LatteHandle *handle,
                                           const double *values,
                                           size_t rows,
                                           double *out,
                                           size_t out_len);

/*
 Empirical CRPS of `n` samples against the realized value `y`.

 # Safety
 `samples` must hold `n` doubles and `out` be valid.
 */
enum LatteStatus latte_crps_empirical(const double *samples, size_t n, double y, double *out);

/*
 CRPS-Sum of `[num_samples, horizon, num_series]` samples against
 `[horizon, num_series]` truth.

 # Safety
 Buffers must hold the stated number of doubles and `out` be valid.
 */
enum LatteStatus latte_crps_sum(const double *samples,
                                const double *truth,
                                size_t num_samples,
                                size_t horizon,
                                size_t num_series,
                                enum LatteCrpsSumMode mode,
                                double *out);

/*
 Per-series NMSE of `[horizon, num_series]` point forecasts; `out`
 receives `num_series` values.

 # Safety
 Buffers must hold the stated number of doubles.
 */
enum LatteStatus latte_nmse(const double *pred,
                            const double *truth,
                            size_t horizon,
                            size_t num_series,
                            double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LATTE_H */
