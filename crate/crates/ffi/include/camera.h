#ifndef CAMERA_H
#define CAMERA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>
#include <stddef.h>

typedef enum CameraStatus {
  CAMERA_STATUS_OK = 0,
  CAMERA_STATUS_NULL_POINTER = 1,
  CAMERA_STATUS_INVALID_ARGUMENT = 2,
  CAMERA_STATUS_CONFIG = 3,
  CAMERA_STATUS_NUMERICAL = 4,
  CAMERA_STATUS_EVALUATION = 5,
  CAMERA_STATUS_IO = 6,
  CAMERA_STATUS_PANIC = 7,
} CameraStatus;

/*
 Opaque fitted Gaussian process.
 */
typedef struct CameraGp CameraGp;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. Valid until the
 next failing call on the same thread; do not free.
 */
const char *camera_last_error(void);

/*
 Releases a string returned by this library. Null is ignored.

 # Safety
 `s` must come from this library and not be freed twice.
 */
void camera_string_free(char *s);

/*
 Closed-form Bichon expected feasibility for `g = rho * f - a`.

 # Safety
 `out` must be valid for writes.
 */
enum CameraStatus camera_ei_bichon(double mean,
                                   double sd,
                                   double rho,
                                   double a,
                                   double eta,
                                   double *out);

/*
 Closed-form Ranjan expected improvement for `g = rho * f - a`.

 # Safety
 `out` must be valid for writes.
 */
enum CameraStatus camera_ei_ranjan(double mean,
                                   double sd,
                                   double rho,
                                   double a,
                                   double eta,
                                   double *out);

/*
 Exponential query cost `c0 * (c2 + exp(-c1 * (1 - s)))`.

 # Safety
 `out` must be valid for writes.
 */
enum CameraStatus camera_cost_exponential(double c0, double c1, double c2, double s, double *out);

/*
 Evaluates a named benchmark at `(x, s)`.

 # Safety
 `name` must be a NUL-terminated string, `x` must hold `dim` values and
 `out` must be valid for writes.
 */
enum CameraStatus camera_benchmark_eval(const char *name,
                                        const double *x,
                                        uintptr_t dim,
                                        double s,
                                        double *out);

/*
 Brute-force failure probability of a named benchmark at `s = 1`.

 # Safety
 `name` must be a NUL-terminated string; the out-pointers must be valid for writes.
 */
enum CameraStatus camera_truth(const char *name,
                               uintptr_t n,
                               uint64_t seed,
                               double *p_hat,
                               double *std_error);

/*
 Fits a Gaussian process over `[lower, upper] x [0, 1]`.

 `x` is row-major with `n * dim` values; `s` and `y` hold `n` values.

 # Safety
 All arrays must hold the stated number of values and `out` must be valid for writes.
 */
enum CameraStatus camera_gp_fit(const double *x,
                                const double *s,
                                const double *y,
                                uintptr_t n,
                                uintptr_t dim,
                                const double *lower,
                                const double *upper,
                                uintptr_t restarts,
                                uint64_t seed,
                                struct CameraGp **out);

/*
 Posterior mean and variance at `(x, s)`.

 # Safety
 `gp` must come from this library, `x` must hold the model's dimension and
 the out-pointers must be valid for writes.
 */
enum CameraStatus camera_gp_predict(const struct CameraGp *gp,
                                    const double *x,
                                    uintptr_t dim,
                                    double s,
                                    double *mean,
                                    double *variance);

/*
 Serializes a model; free the result with [`camera_string_free`].

 # Safety
 `gp` must come from this library and `out` must be valid for writes.
 */
enum CameraStatus camera_gp_to_json(const struct CameraGp *gp, char **out);

/*
 Restores a model saved with [`camera_gp_to_json`].

 # Safety
 `json` must be a NUL-terminated string and `out` must be valid for writes.
 */
enum CameraStatus camera_gp_from_json(const char *json, struct CameraGp **out);

/*
 Releases a model. Null is ignored.

 # Safety
 `gp` must come from this library and not be freed twice.
 */
void camera_gp_free(struct CameraGp *gp);

/*
 Runs one experiment from a JSON config and returns its summary JSON.
 Free the result with [`camera_string_free`].

 # Safety
 `config_json` must be a NUL-terminated string and `out` must be valid for writes.
 */
enum CameraStatus camera_run_json(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CAMERA_H */
