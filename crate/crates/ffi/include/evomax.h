#ifndef EVOMAX_H
#define EVOMAX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum EvomaxStatus {
  EVOMAX_STATUS_OK = 0,
  EVOMAX_STATUS_NULL_POINTER = 1,
  EVOMAX_STATUS_INVALID_ARGUMENT = 2,
  EVOMAX_STATUS_DIMENSION_MISMATCH = 3,
  EVOMAX_STATUS_NUMERICAL = 4,
  EVOMAX_STATUS_PANIC = 5,
} EvomaxStatus;

typedef enum EvomaxBackend {
  EVOMAX_BACKEND_PERIODIC = 0,
  EVOMAX_BACKEND_BOUNDED_STAGGERED = 1,
} EvomaxBackend;

// Block operators that can be assembled from a grid.
typedef enum EvomaxOperatorKind {
  EVOMAX_OPERATOR_KIND_A_DAC = 0,
  EVOMAX_OPERATOR_KIND_A_NAC = 1,
  EVOMAX_OPERATOR_KIND_A_MAX = 2,
  EVOMAX_OPERATOR_KIND_AAC = 3,
  EVOMAX_OPERATOR_KIND_EXTENDED = 4,
  EVOMAX_OPERATOR_KIND_GEM = 5,
  EVOMAX_OPERATOR_KIND_DIRAC = 6,
} EvomaxOperatorKind;

// Opaque grid handle.
typedef struct EvomaxGrid EvomaxGrid;

// Opaque block-operator handle.
typedef struct EvomaxOperator EvomaxOperator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next library call on this thread.
const char *evomax_last_error_message(void);

// Library version as a static nul-terminated string.
const char *evomax_version(void);

// Creates a grid with `nx * ny * nz` cells of side `h`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle pointer.
enum EvomaxStatus evomax_grid_new(enum EvomaxBackend backend,
                                  size_t nx,
                                  size_t ny,
                                  size_t nz,
                                  double h,
                                  struct EvomaxGrid **out);

// Releases a grid. Null is ignored.
//
// # Safety
// `grid` must come from [`evomax_grid_new`] and not be used afterwards.
void evomax_grid_free(struct EvomaxGrid *grid);

// Max-norm residuals of `curl_int grad_int`, `div_int curl_int`,
// `curl grad` and `div curl`, written to `out[0..4]`.
//
// # Safety
// `grid` must be a live handle and `out` must point to 4 writable doubles.
enum EvomaxStatus evomax_grid_exact_sequence_residuals(const struct EvomaxGrid *grid, double *out);

// Max-norm residual of the wave identity on a periodic grid.
//
// # Safety
// `grid` must be a live handle and `out` a writable double.
enum EvomaxStatus evomax_grid_wave_residual(const struct EvomaxGrid *grid, double *out);

// Assembles a block operator on `grid`.
//
// # Safety
// `grid` must be a live handle and `out` writable storage for one pointer.
enum EvomaxStatus evomax_operator_assemble(const struct EvomaxGrid *grid,
                                           enum EvomaxOperatorKind kind,
                                           struct EvomaxOperator **out);

// Releases an operator. Null is ignored.
//
// # Safety
// `op` must come from [`evomax_operator_assemble`] and not be used afterwards.
void evomax_operator_free(struct EvomaxOperator *op);

// Total number of unknowns the operator acts on.
//
// # Safety
// `op` must be a live handle and `out` a writable `size_t`.
enum EvomaxStatus evomax_operator_dim(const struct EvomaxOperator *op, size_t *out);

// `y = A x`; both lengths must equal the operator dimension.
//
// # Safety
// `x` must point to `x_len` readable doubles and `y` to `y_len` writable ones.
enum EvomaxStatus evomax_operator_apply(const struct EvomaxOperator *op,
                                        const double *x,
                                        size_t x_len,
                                        double *y,
                                        size_t y_len);

// Max-norm of `A + A^T`.
//
// # Safety
// `op` must be a live handle and `out` a writable double.
enum EvomaxStatus evomax_operator_skew_defect(const struct EvomaxOperator *op, double *out);

// Max-norm of the product `A B` of two operators on the same layout.
//
// # Safety
// `a`, `b` must be live handles and `out` a writable double.
enum EvomaxStatus evomax_operator_annihilation(const struct EvomaxOperator *a,
                                               const struct EvomaxOperator *b,
                                               double *out);

// Runs the identity suite and returns its JSON report in `json_out`
// (release with [`evomax_string_free`]). `passed` receives 1 when every
// check passed, else 0. A failed check is not an error status.
//
// # Safety
// `sizes` must point to `n_sizes` readable values; `json_out` and `passed`
// must be writable.
enum EvomaxStatus evomax_run_suite(const size_t *sizes,
                                   size_t n_sizes,
                                   uint64_t seed,
                                   char **json_out,
                                   int32_t *passed);

// Releases a string returned by the library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void evomax_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVOMAX_H */
