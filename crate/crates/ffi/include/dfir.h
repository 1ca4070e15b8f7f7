#ifndef DFIR_H
#define DFIR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  DFIR_STATUS_OK = 0,
  DFIR_STATUS_NULL_POINTER = 1,
  DFIR_STATUS_INVALID_ARGUMENT = 2,
  DFIR_STATUS_SHAPE_ERROR = 3,
  DFIR_STATUS_IO_ERROR = 4,
  DFIR_STATUS_VERIFY_FAILED = 5,
  DFIR_STATUS_INTERNAL = 6,
} DfirStatus;

/**
 * Opaque tensor handle (dense row-major f64).
 */
typedef struct DfirTensor DfirTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dfir_version(void);

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call from the same thread.
 */
const char *dfir_last_error_message(void);

/**
 * Create a tensor from caller-provided extents and row-major data.
 *
 * # Safety
 * `extents` must point to `ndim` readable u64 values, `data` to `len`
 * readable f64 values, and `out` must be a valid write target.
 */
DfirStatus dfir_tensor_create(const uint64_t *extents,
                              uintptr_t ndim,
                              const double *data,
                              uintptr_t len,
                              DfirTensor **out);

/**
 * Seeded uniform tensor in [-1, 1].
 *
 * # Safety
 * `extents` must point to `ndim` readable u64 values and `out` must be a
 * valid write target.
 */
DfirStatus dfir_tensor_random(const uint64_t *extents,
                              uintptr_t ndim,
                              uint64_t seed,
                              DfirTensor **out);

/**
 * Release a tensor handle. Null is ignored.
 *
 * # Safety
 * `t` must have been produced by this library and not freed before.
 */
void dfir_tensor_free(DfirTensor *t);

/**
 * Number of axes.
 *
 * # Safety
 * `t` and `out` must be valid pointers.
 */
DfirStatus dfir_tensor_ndim(const DfirTensor *t, uintptr_t *out);

/**
 * Total element count.
 *
 * # Safety
 * `t` and `out` must be valid pointers.
 */
DfirStatus dfir_tensor_numel(const DfirTensor *t, uintptr_t *out);

/**
 * Copy the extents into a caller buffer of capacity `cap`.
 *
 * # Safety
 * `t` must be valid and `buf` writable for `cap` u64 values.
 */
DfirStatus dfir_tensor_extents(const DfirTensor *t, uint64_t *buf, uintptr_t cap);

/**
 * Copy the row-major values into a caller buffer of capacity `cap`.
 *
 * # Safety
 * `t` must be valid and `buf` writable for `cap` f64 values.
 */
DfirStatus dfir_tensor_copy_data(const DfirTensor *t, double *buf, uintptr_t cap);

/**
 * L1 norm of the tensor.
 *
 * # Safety
 * `t` and `out` must be valid pointers.
 */
DfirStatus dfir_tensor_l1_norm(const DfirTensor *t, double *out);

/**
 * Read a tensor fixture file (f32 fixtures are widened to f64).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid write target.
 */
DfirStatus dfir_tensor_read_file(const char *path, DfirTensor **out);

/**
 * Write a tensor to a fixture file (f64 layout).
 *
 * # Safety
 * `t` must be valid and `path` a NUL-terminated string.
 */
DfirStatus dfir_tensor_write_file(const DfirTensor *t, const char *path);

/**
 * Forward pass of the backbone block with seeded parameters.
 *
 * # Safety
 * `x` must be a valid handle and `out` a valid write target.
 */
DfirStatus dfir_dcfa_forward(const DfirTensor *x,
                             uintptr_t stack_depth,
                             uint64_t seed,
                             DfirTensor **out);

/**
 * Forward pass of the frequency refinement block with seeded parameters.
 *
 * # Safety
 * `x` must be a valid handle and `out` a valid write target.
 */
DfirStatus dfir_firc3_forward(const DfirTensor *x,
                              uintptr_t iterations,
                              uint64_t seed,
                              DfirTensor **out);

/**
 * Fuse a pyramid of `count` levels (finest first, adjacent extents related
 * by `scale`); writes `count` fused level handles into `outs`.
 *
 * # Safety
 * `levels` must point to `count` valid handles and `outs` to `count`
 * writable slots.
 */
DfirStatus dfir_dfpn_fuse(const DfirTensor *const *levels,
                          uintptr_t count,
                          uintptr_t scale,
                          uint64_t seed,
                          DfirTensor **outs);

/**
 * Run a verification suite selection ("dcfa", "dfpn", "firc3", or "all")
 * with one seed. Writes a JSON report when `report_path` is non-null.
 * Returns Ok only when every case passes.
 *
 * # Safety
 * `block` must be NUL-terminated; `report_path` may be null.
 */
DfirStatus dfir_verify(const char *block,
                       uint64_t seed,
                       uintptr_t threads,
                       const char *report_path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DFIR_H */
