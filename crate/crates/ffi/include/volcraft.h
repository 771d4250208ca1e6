#ifndef VOLCRAFT_H
#define VOLCRAFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; the numeric values match the CLI exit codes where they overlap.
 */
typedef enum VcStatus {
  VC_STATUS_OK = 0,
  VC_STATUS_NULL_POINTER = 1,
  VC_STATUS_INVALID_ARGUMENT = 2,
  VC_STATUS_DATA_ERROR = 3,
  VC_STATUS_NUMERICAL_ERROR = 4,
  VC_STATUS_PANIC = 5,
} VcStatus;

/**
 * Opaque model handle.
 */
typedef struct VcModel VcModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or NULL. Valid until the next failing call on the same thread.
 */
const char *vc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *vc_version(void);

/**
 * Load a model JSON file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum VcStatus vc_model_load(const char *path, struct VcModel **out);

/**
 * Parse a model from a JSON string.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum VcStatus vc_model_from_json(const char *json, struct VcModel **out);

/**
 * Release a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from a `vc_model_*` constructor and not have been freed.
 */
void vc_model_free(struct VcModel *model);

/**
 * Latent dimension and number of grid points.
 *
 * # Safety
 * `model` must be a live handle; the out-pointers must be writable.
 */
enum VcStatus vc_model_dims(const struct VcModel *model, size_t *latent_dim, size_t *grid_len);

/**
 * Decode `z` onto the model grid, maturity-major.
 *
 * # Safety
 * `z` holds `z_len` doubles; `out_vols` has room for `out_len` doubles.
 */
enum VcStatus vc_model_decode(const struct VcModel *model,
                              const double *z,
                              size_t z_len,
                              double *out_vols,
                              size_t out_len);

/**
 * Decode `z` at arbitrary `(maturity, delta)` points.
 *
 * # Safety
 * `maturities`, `deltas` and `out_vols` each hold `n` doubles; `z` holds `z_len`.
 */
enum VcStatus vc_model_decode_at(const struct VcModel *model,
                                 const double *z,
                                 size_t z_len,
                                 const double *maturities,
                                 const double *deltas,
                                 size_t n,
                                 double *out_vols);

/**
 * Encoder mean of a full grid surface.
 *
 * # Safety
 * `vols` holds `n` doubles; `out_mean` has room for `d` doubles.
 */
enum VcStatus vc_model_encode(const struct VcModel *model,
                              const double *vols,
                              size_t n,
                              double *out_mean,
                              size_t d);

/**
 * Complete a surface from `n` observations by multi-start latent calibration.
 *
 * Writes the fitted latent point, the completed grid vols and the objective value.
 *
 * # Safety
 * `maturities`, `deltas`, `vols` hold `n` doubles; `out_z` has `z_len` and
 * `out_vols` `out_len` doubles of room; `out_objective` may be NULL.
 */
enum VcStatus vc_model_complete(const struct VcModel *model,
                                const double *maturities,
                                const double *deltas,
                                const double *vols,
                                size_t n,
                                size_t starts,
                                uint64_t seed,
                                double *out_z,
                                size_t z_len,
                                double *out_vols,
                                size_t out_len,
                                double *out_objective);

/**
 * Black-Scholes call price.
 *
 * # Safety
 * `out` must be writable.
 */
enum VcStatus vc_bs_call_price(double spot,
                               double strike,
                               double rate,
                               double maturity,
                               double vol,
                               double *out);

/**
 * Black-Scholes implied vol of a call price.
 *
 * # Safety
 * `out` must be writable.
 */
enum VcStatus vc_implied_vol(double price,
                             double spot,
                             double strike,
                             double rate,
                             double maturity,
                             double *out);

/**
 * Semi-analytic Heston call price.
 *
 * # Safety
 * `out` must be writable.
 */
enum VcStatus vc_heston_call_price(double kappa,
                                   double theta,
                                   double sigma_v,
                                   double rho,
                                   double v0,
                                   double rate,
                                   double spot,
                                   double strike,
                                   double maturity,
                                   double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VOLCRAFT_H */
