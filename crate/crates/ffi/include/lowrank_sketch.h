#ifndef LOWRANK_SKETCH_H
#define LOWRANK_SKETCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible function.
typedef enum LsStatus {
  LS_STATUS_OK = 0,
  LS_STATUS_NULL_POINTER = 1,
  LS_STATUS_INVALID_ARGUMENT = 2,
  LS_STATUS_DIMENSION_MISMATCH = 3,
  LS_STATUS_NON_FINITE = 4,
  LS_STATUS_IO = 5,
  LS_STATUS_FORMAT = 6,
  LS_STATUS_DIVERGENCE = 7,
  // A panic was caught at the boundary.
  LS_STATUS_INTERNAL = 8,
} LsStatus;

// Dense row-major matrix.
typedef struct LsMatrix LsMatrix;

// Sparse sketch with one nonzero per column per block.
typedef struct LsSketch LsSketch;

// Training options. Start from [`ls_train_options_default`].
typedef struct LsTrainOptions {
  size_t k;
  double lr;
  size_t iterations;
  size_t batch_size;
  uint64_t seed;
  size_t power_iters;
  // 0 learned, 1 mixed joint, 2 mixed separate.
  uint32_t mode;
  // Rows of the trained block in the mixed modes.
  size_t learned_rows;
} LsTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failing call on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *ls_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ls_version(void);

// Copies `rows * cols` row-major values into a new matrix.
//
// # Safety
// `data` must point to `rows * cols` readable doubles; `out` must be writable.
enum LsStatus ls_matrix_new(size_t rows, size_t cols, const double *data, struct LsMatrix **out);

// Reads a DMAT1 or CSV matrix file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LsStatus ls_matrix_load(const char *path, struct LsMatrix **out);

// Writes a matrix as DMAT1.
//
// # Safety
// `m` must be a live handle; `path` a NUL-terminated string.
enum LsStatus ls_matrix_save(const struct LsMatrix *m, const char *path);

// Number of rows, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t ls_matrix_rows(const struct LsMatrix *m);

// Number of columns, or 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t ls_matrix_cols(const struct LsMatrix *m);

// Copies the row-major values into `buf`, which must hold `len >= rows * cols` doubles.
//
// # Safety
// `m` must be a live handle; `buf` must point to `len` writable doubles.
enum LsStatus ls_matrix_copy_data(const struct LsMatrix *m, double *buf, size_t len);

// # Safety
// `m` must be null or a handle not yet freed.
void ls_matrix_free(struct LsMatrix *m);

// Random sparse sign sketch of shape `m × n`.
//
// # Safety
// `out` must be writable.
enum LsStatus ls_sketch_sparse_random(size_t m, size_t n, uint64_t seed, struct LsSketch **out);

// Reads an SKCH1 file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum LsStatus ls_sketch_load(const char *path, struct LsSketch **out);

// Writes an SKCH1 file.
//
// # Safety
// `s` must be a live handle; `path` a NUL-terminated string.
enum LsStatus ls_sketch_save(const struct LsSketch *s, const char *path);

// Writes the sketch shape to `m` and `n`.
//
// # Safety
// `s` must be a live handle; `m` and `n` must be writable.
enum LsStatus ls_sketch_shape(const struct LsSketch *s, size_t *m, size_t *n);

// Vertical concatenation `[s1; s2]`.
//
// # Safety
// `s1`, `s2` must be live handles; `out` must be writable.
enum LsStatus ls_sketch_concat(const struct LsSketch *s1,
                               const struct LsSketch *s2,
                               struct LsSketch **out);

// Computes `S·A`.
//
// # Safety
// `s`, `a` must be live handles; `out` must be writable.
enum LsStatus ls_sketch_apply(const struct LsSketch *s,
                              const struct LsMatrix *a,
                              struct LsMatrix **out);

// # Safety
// `s` must be null or a handle not yet freed.
void ls_sketch_free(struct LsSketch *s);

// Frobenius error of the sketched rank-`k` approximation of `a`.
//
// # Safety
// `a`, `s` must be live handles; `loss` must be writable.
enum LsStatus ls_scw_loss(const struct LsMatrix *a,
                          const struct LsSketch *s,
                          size_t k,
                          double *loss);

// Rank-`k` approximation of `a` computed through the sketch. `loss` may be null.
//
// # Safety
// `a`, `s` must be live handles; `out` must be writable.
enum LsStatus ls_scw_approximate(const struct LsMatrix *a,
                                 const struct LsSketch *s,
                                 size_t k,
                                 struct LsMatrix **out,
                                 double *loss);

// Defaults matching the library's training configuration.
struct LsTrainOptions ls_train_options_default(void);

// Trains an `m`-row sketch on `count` matrices sharing a row count.
//
// # Safety
// `train_set` must point to `count` live matrix handles; `opts` must be
// readable; `out` must be writable.
enum LsStatus ls_train(const struct LsMatrix *const *train_set,
                       size_t count,
                       size_t m,
                       const struct LsTrainOptions *opts,
                       struct LsSketch **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOWRANK_SKETCH_H */
