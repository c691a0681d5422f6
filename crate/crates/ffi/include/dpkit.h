#ifndef DPKIT_H
#define DPKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DpkitStatus {
  DPKIT_STATUS_OK = 0,
  DPKIT_STATUS_NULL_POINTER = 1,
  DPKIT_STATUS_INVALID_ARGUMENT = 2,
  DPKIT_STATUS_INFINITE_PRIVACY_LOSS = 3,
  DPKIT_STATUS_CALIBRATION_OUT_OF_RANGE = 4,
  DPKIT_STATUS_SHAPE = 5,
  DPKIT_STATUS_CONFIG = 6,
  DPKIT_STATUS_DATA = 7,
  DPKIT_STATUS_PARSE = 8,
  DPKIT_STATUS_IO = 9,
  DPKIT_STATUS_PANIC = 10,
} DpkitStatus;

/**
 * Privacy accounting method.
 */
typedef enum DpkitAccounting {
  /**
   * Numerical privacy-loss distribution; the library default.
   */
  DPKIT_ACCOUNTING_PLD = 0,
  /**
   * Rényi accounting with the improved conversion to (epsilon, delta).
   */
  DPKIT_ACCOUNTING_RDP = 1,
  /**
   * Rényi accounting with the classic conversion.
   */
  DPKIT_ACCOUNTING_RDP_CLASSIC = 2,
} DpkitAccounting;

/**
 * Opaque running accountant for a fixed noise multiplier and sampling rate.
 */
typedef struct DpkitAccountant DpkitAccountant;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *dpkit_version(void);

/**
 * Length in bytes of the last error message on this thread, excluding the
 * terminator; 0 when there is none.
 */
size_t dpkit_last_error_length(void);

/**
 * Copies the last error message into `buf`, truncating to `len - 1` bytes
 * and always nul-terminating when `len > 0`. Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t dpkit_last_error_message(char *buf, size_t len);

/**
 * Clears the last error on this thread.
 */
void dpkit_clear_last_error(void);

/**
 * Epsilon spent by `steps` Poisson-subsampled Gaussian steps.
 *
 * # Safety
 * `out` must point to a writable `double`.
 */
enum DpkitStatus dpkit_epsilon_of(double sigma,
                                  double sample_rate,
                                  uint64_t steps,
                                  double delta,
                                  enum DpkitAccounting accounting,
                                  double *out);

/**
 * Smallest noise multiplier meeting `(epsilon, delta)` for `epochs` passes
 * over `dataset_size` examples at expected batch size `batch_size`.
 *
 * # Safety
 * `sigma_out` must point to a writable `double`.
 */
enum DpkitStatus dpkit_calibrate(double epsilon,
                                 double delta,
                                 size_t batch_size,
                                 size_t epochs,
                                 size_t dataset_size,
                                 enum DpkitAccounting accounting,
                                 double *sigma_out);

/**
 * Creates an accountant with zero steps recorded.
 *
 * # Safety
 * `out` must point to a writable handle slot. On success it receives a
 * handle that must be released with [`dpkit_accountant_free`].
 */
enum DpkitStatus dpkit_accountant_new(double sigma,
                                      double sample_rate,
                                      double delta,
                                      enum DpkitAccounting accounting,
                                      struct DpkitAccountant **out);

/**
 * Records `n` more steps.
 *
 * # Safety
 * `handle` must come from [`dpkit_accountant_new`] and not be freed.
 */
enum DpkitStatus dpkit_accountant_step(struct DpkitAccountant *handle, uint64_t n);

/**
 * # Safety
 * `handle` must come from [`dpkit_accountant_new`] and not be freed; `out`
 * must point to a writable `uint64_t`.
 */
enum DpkitStatus dpkit_accountant_steps(const struct DpkitAccountant *handle, uint64_t *out);

/**
 * Epsilon spent so far; infinite when sigma is zero.
 *
 * # Safety
 * `handle` must come from [`dpkit_accountant_new`] and not be freed; `out`
 * must point to a writable `double`.
 */
enum DpkitStatus dpkit_accountant_epsilon(const struct DpkitAccountant *handle, double *out);

/**
 * Releases an accountant. Null is ignored.
 *
 * # Safety
 * `handle` must be null or come from [`dpkit_accountant_new`], and must not
 * be used afterwards.
 */
void dpkit_accountant_free(struct DpkitAccountant *handle);

/**
 * Scales each of the `rows` row-major gradients of length `dim` in place so
 * its L2 norm is at most `clip_norm`.
 *
 * # Safety
 * `grads` must point to `rows * dim` writable doubles.
 */
enum DpkitStatus dpkit_clip_per_sample(double *grads, size_t rows, size_t dim, double clip_norm);

/**
 * Writes `(sum of clipped rows + N(0, sigma^2 clip_norm^2)) / expected_batch`
 * into `out`. The noise stream is determined by `seed`.
 *
 * # Safety
 * `grads` must point to `rows * dim` readable doubles and `out` to `dim`
 * writable doubles.
 */
enum DpkitStatus dpkit_privatize(const double *grads,
                                 size_t rows,
                                 size_t dim,
                                 double clip_norm,
                                 double sigma,
                                 double expected_batch,
                                 uint64_t seed,
                                 double *out);

/**
 * Adds i.i.d. Laplace noise of scale `sensitivity / epsilon` to `len`
 * values in place. The noise stream is determined by `seed`.
 *
 * # Safety
 * `data` must point to `len` writable doubles.
 */
enum DpkitStatus dpkit_laplace_perturb(double *data,
                                       size_t len,
                                       double epsilon,
                                       double sensitivity,
                                       uint64_t seed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DPKIT_H */
