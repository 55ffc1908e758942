#ifndef MLRP_H
#define MLRP_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MlrpStatus {
  MLRP_STATUS_OK = 0,
  MLRP_STATUS_NULL_POINTER = 1,
  MLRP_STATUS_INVALID_ARGUMENT = 2,
  MLRP_STATUS_IO = 3,
  MLRP_STATUS_MODEL = 4,
  MLRP_STATUS_SOLVER = 5,
  MLRP_STATUS_NETWORK = 6,
  MLRP_STATUS_PANIC = 7,
} MlrpStatus;

// Velocity model handle.
typedef struct MlrpModel MlrpModel;

// Trained network loaded from a checkpoint.
typedef struct MlrpNetwork MlrpNetwork;

// Complex wavefield on a model grid.
typedef struct MlrpWavefield MlrpWavefield;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call into this library on the same
// thread.
const char *mlrp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mlrp_version(void);

// # Safety
// `out_value` must be null or point to writable memory for one `double`.
enum MlrpStatus mlrp_bessel_j0(double x, double *out_value);

// # Safety
// `out_value` must be null or point to writable memory for one `double`.
enum MlrpStatus mlrp_bessel_y0(double x, double *out_value);

// Analytic background field at `(x, z)` for a source at `(xs, zs)`; all
// lengths in km, `omega` in rad/s and `v0` in km/s.
//
// # Safety
// `out_re` and `out_im` must be null or writable.
enum MlrpStatus mlrp_background_wavefield(double x,
                                          double z,
                                          double xs,
                                          double zs,
                                          double omega,
                                          double v0,
                                          double *out_re,
                                          double *out_im);

// Homogeneous model of `extent_x` by `extent_z` km at grid `spacing` km.
//
// # Safety
// `out_model` must be null or writable.
enum MlrpStatus mlrp_model_constant(double extent_x,
                                    double extent_z,
                                    double spacing,
                                    double velocity,
                                    struct MlrpModel **out_model);

// Random horizontally layered model with `n_layers` layers.
//
// # Safety
// `out_model` must be null or writable.
enum MlrpStatus mlrp_model_layered(uint64_t seed,
                                   double extent_x,
                                   double extent_z,
                                   size_t n_layers,
                                   struct MlrpModel **out_model);

// # Safety
// `path` must be null or a NUL-terminated string; `out_model` null or writable.
enum MlrpStatus mlrp_model_load(const char *path, struct MlrpModel **out_model);

// # Safety
// `model` must be null or a live handle; `path` null or NUL-terminated.
enum MlrpStatus mlrp_model_save(const struct MlrpModel *model, const char *path);

// Grid node counts along x and z.
//
// # Safety
// `model` must be null or a live handle; outputs null or writable.
enum MlrpStatus mlrp_model_dims(const struct MlrpModel *model, size_t *out_nx, size_t *out_nz);

// Velocity in km/s at `(x, z)` km.
//
// # Safety
// `model` must be null or a live handle; `out_value` null or writable.
enum MlrpStatus mlrp_model_velocity_at(const struct MlrpModel *model,
                                       double x,
                                       double z,
                                       double *out_value);

// # Safety
// `model` must be null or a handle not yet freed.
void mlrp_model_free(struct MlrpModel *model);

// FD scattered field for a point source at `(xs, zs)` km and `freq` Hz, with
// `pml_cells` absorbing cells outside each side of the model.
//
// # Safety
// `model` must be null or a live handle; `out_field` null or writable.
enum MlrpStatus mlrp_solve_scattered(const struct MlrpModel *model,
                                     double xs,
                                     double zs,
                                     double freq,
                                     size_t pml_cells,
                                     struct MlrpWavefield **out_field);

// # Safety
// `path` must be null or NUL-terminated; `out_field` null or writable.
enum MlrpStatus mlrp_wavefield_load(const char *path, struct MlrpWavefield **out_field);

// # Safety
// `field` must be null or a live handle; `path` null or NUL-terminated.
enum MlrpStatus mlrp_wavefield_save(const struct MlrpWavefield *field, const char *path);

// Node counts and frequency in Hz.
//
// # Safety
// `field` must be null or a live handle; outputs null or writable.
enum MlrpStatus mlrp_wavefield_dims(const struct MlrpWavefield *field,
                                    size_t *out_nx,
                                    size_t *out_nz,
                                    double *out_freq);

// Copies the field as interleaved `(re, im)` pairs, z fastest. `len` is the
// capacity of `buf` in doubles and must be at least `2 * nx * nz`.
//
// # Safety
// `field` must be null or a live handle; `buf` null or writable for `len` doubles.
enum MlrpStatus mlrp_wavefield_values(const struct MlrpWavefield *field, double *buf, size_t len);

// # Safety
// `field` must be null or a handle not yet freed.
void mlrp_wavefield_free(struct MlrpWavefield *field);

// Loads a checkpoint that can produce a wavefield: a fine-tuned LRPINN, a
// meta-trained network with its hypernetwork, or a vanilla PINN.
//
// # Safety
// `path` must be null or NUL-terminated; `out_net` null or writable.
enum MlrpStatus mlrp_network_load(const char *path, struct MlrpNetwork **out_net);

// Predicts the scattered field at `n` points. Inputs are arrays of length
// `n`; `out` receives `2 * n` doubles as interleaved `(re, im)` pairs.
//
// # Safety
// `net` must be null or a live handle; each input null or readable for `n`
// doubles; `out` null or writable for `2 * n` doubles.
enum MlrpStatus mlrp_network_predict(const struct MlrpNetwork *net,
                                     size_t n,
                                     const double *x,
                                     const double *z,
                                     const double *xs,
                                     const double *zs,
                                     double freq,
                                     double *out_values);

// Hidden layers, width and rank of a loaded network.
//
// # Safety
// `net` must be null or a live handle; outputs null or writable.
enum MlrpStatus mlrp_network_shape(const struct MlrpNetwork *net,
                                   size_t *out_layers,
                                   size_t *out_width,
                                   size_t *out_rank);

// # Safety
// `net` must be null or a handle not yet freed.
void mlrp_network_free(struct MlrpNetwork *net);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MLRP_H */
