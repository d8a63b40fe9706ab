#ifndef PEDA_H
#define PEDA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PedaStatus {
  PEDA_STATUS_OK = 0,
  PEDA_STATUS_NULL_POINTER = 1,
  PEDA_STATUS_INVALID_ARGUMENT = 2,
  PEDA_STATUS_SHAPE_MISMATCH = 3,
  PEDA_STATUS_CFL = 4,
  PEDA_STATUS_NON_FINITE = 5,
  PEDA_STATUS_IO = 6,
  PEDA_STATUS_FORMAT = 7,
  PEDA_STATUS_CONFIG = 8,
  PEDA_STATUS_NUMERICAL = 9,
  PEDA_STATUS_PANIC = 10,
} PedaStatus;

/**
 * Opaque model handle.
 */
typedef struct PedaModel PedaModel;

/**
 * Opaque state handle (`u`, `v`, `θ` on one grid).
 */
typedef struct PedaState PedaState;

/**
 * Model parameters passed by value.
 */
typedef struct PedaModelParams {
  size_t nx;
  size_t ny;
  size_t nz;
  double depth;
  double alpha;
  double beta;
  double gamma;
  double nu;
  double dt;
  /**
   * Wind-stress amplitude; 0 disables forcing.
   */
  double tau0;
  /**
   * Nonzero drops the advection terms.
   */
  int32_t linear;
} PedaModelParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *peda_version(void);

/**
 * Copies the calling thread's last error message into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t peda_last_error_message(char *buf, size_t len);

/**
 * Creates a model. On success `*out` owns a handle to release with [`peda_model_free`].
 *
 * # Safety
 * `out` must be null or writable.
 */
enum PedaStatus peda_model_new(struct PedaModelParams params, struct PedaModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`peda_model_new`] not yet freed.
 */
void peda_model_free(struct PedaModel *model);

/**
 * Number of grid points per component, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t peda_model_grid_len(const struct PedaModel *model);

/**
 * Allocates a state of zeros on the model grid.
 *
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum PedaStatus peda_state_new(const struct PedaModel *model, struct PedaState **out);

/**
 * Reads a state from snapshot files `<prefix>_{u,v,theta}.bin`.
 *
 * # Safety
 * `prefix` must be a NUL-terminated string; `out` must be writable.
 */
enum PedaStatus peda_state_read(const char *prefix, struct PedaState **out);

/**
 * Writes a state as snapshot files `<prefix>_{u,v,theta}.bin`.
 *
 * # Safety
 * `state` must be a live handle and `prefix` a NUL-terminated string.
 */
enum PedaStatus peda_state_write(const struct PedaState *state, const char *prefix);

/**
 * # Safety
 * `state` must be null or a handle not yet freed.
 */
void peda_state_free(struct PedaState *state);

/**
 * Copies component `component` (0 = u, 1 = v, 2 = θ) into `buf`, x fastest then y then z.
 *
 * # Safety
 * `state` must be a live handle; `buf` must hold `len` doubles.
 */
enum PedaStatus peda_state_get(const struct PedaState *state,
                               uint32_t component,
                               double *buf,
                               size_t len);

/**
 * Overwrites one component from `buf`.
 *
 * # Safety
 * `state` must be a live handle; `buf` must hold `len` doubles.
 */
enum PedaStatus peda_state_set(struct PedaState *state,
                               uint32_t component,
                               const double *buf,
                               size_t len);

/**
 * Projects the state's velocity onto the rigid-lid subspace and zeroes boundary levels.
 *
 * # Safety
 * Both handles must be live.
 */
enum PedaStatus peda_model_project(const struct PedaModel *model, struct PedaState *state);

/**
 * Advances the state in place by `nsteps` time steps.
 *
 * # Safety
 * Both handles must be live.
 */
enum PedaStatus peda_model_integrate(const struct PedaModel *model,
                                     struct PedaState *state,
                                     size_t nsteps);

/**
 * Kinetic energy `½∫(u² + v²)`.
 *
 * # Safety
 * `state` must be a live handle; `out` writable.
 */
enum PedaStatus peda_state_kinetic_energy(const struct PedaState *state, double *out);

/**
 * Largest depth-integrated horizontal divergence.
 *
 * # Safety
 * `state` must be a live handle; `out` writable.
 */
enum PedaStatus peda_state_max_divergence(const struct PedaState *state, double *out);

/**
 * Both sides of the vertical-velocity bound; `*pass` is 1 when it holds.
 *
 * # Safety
 * `state` must be a live handle; outputs writable.
 */
enum PedaStatus peda_check_w_bound(const struct PedaState *state,
                                   double *lhs,
                                   double *rhs,
                                   int32_t *pass);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEDA_H */
