#ifndef MULTIFUN_DAG_H
#define MULTIFUN_DAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Numeric values match the command-line exit codes where
// both exist.
typedef enum MfdagStatus {
  MFDAG_STATUS_OK = 0,
  // Numerical failure inside the solver or the E-step.
  MFDAG_STATUS_NUMERICAL = 1,
  // Invalid input, configuration or shape.
  MFDAG_STATUS_INVALID_INPUT = 2,
  // File system error.
  MFDAG_STATUS_IO = 3,
  // EM stopped at its iteration cap; the model is still returned.
  MFDAG_STATUS_NOT_CONVERGED = 4,
  // A required pointer argument was null.
  MFDAG_STATUS_NULL_POINTER = 5,
  // Caller buffer is too small.
  MFDAG_STATUS_BUFFER_TOO_SMALL = 6,
  // Internal panic caught at the boundary.
  MFDAG_STATUS_PANIC = 7,
} MfdagStatus;

// A dataset, optionally with its generating ground truth.
typedef struct MfdagDataset MfdagDataset;

// A fitted model with its report.
typedef struct MfdagModel MfdagModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. The pointer
// stays valid until the next library call on the same thread.
const char *mfdag_last_error(void);

// Library version as a static string.
const char *mfdag_version(void);

// Release a string returned by the library.
//
// # Safety
// `s` must be null or a pointer returned by this library and not yet freed.
void mfdag_string_free(char *s);

// Build a dataset from a row-major `n × (Σ_j l[j]·t)` array. Columns are
// ordered node, then function, then grid point.
//
// # Safety
// `l` must point to `p` values, `values` to `len` values and `out` to
// writable storage for one pointer.
enum MfdagStatus mfdag_dataset_new(size_t p,
                                   const size_t *l,
                                   size_t t,
                                   size_t n,
                                   const double *values,
                                   size_t len,
                                   struct MfdagDataset **out);

// Load a dataset directory written by `multifun-dag generate`.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` writable.
enum MfdagStatus mfdag_dataset_load(const char *dir, struct MfdagDataset **out);

// Sample a synthetic dataset: `p` nodes with `l0` functions each, `k0`
// Fourier basis functions, `t` grid points and `n` samples.
//
// # Safety
// `out` must be writable.
enum MfdagStatus mfdag_generate(size_t p,
                                size_t l0,
                                size_t k0,
                                size_t t,
                                size_t n,
                                double edge_prob,
                                uint64_t seed,
                                struct MfdagDataset **out);

// Number of nodes, or 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t mfdag_dataset_nodes(const struct MfdagDataset *ds);

// Copy the true adjacency (1.0 for an edge) into a row-major `p × p`
// buffer. Fails with `InvalidInput` when the dataset has no ground truth.
//
// # Safety
// `ds` must be a live handle and `buf` must hold `len` values.
enum MfdagStatus mfdag_dataset_true_adjacency(const struct MfdagDataset *ds,
                                              double *buf,
                                              size_t len);

// Release a dataset handle.
//
// # Safety
// `ds` must be null or a handle from this library that was not yet freed.
void mfdag_dataset_free(struct MfdagDataset *ds);

// Fit the EM model with `k` basis functions per node and group-lasso
// weight `lambda`, other settings at their defaults. On `NotConverged`
// the model is still written to `out`.
//
// # Safety
// `ds` must be a live handle and `out` writable.
enum MfdagStatus mfdag_fit(const struct MfdagDataset *ds,
                           size_t k,
                           double lambda,
                           uint64_t seed,
                           struct MfdagModel **out);

// Fit with a JSON config in the `fit --config` format, including
// `"method"`.
//
// # Safety
// `ds` must be a live handle, `config_json` NUL-terminated and `out`
// writable.
enum MfdagStatus mfdag_fit_json(const struct MfdagDataset *ds,
                                const char *config_json,
                                struct MfdagModel **out);

// Number of nodes in a model, or 0 for a null handle.
//
// # Safety
// `model` must be null or a live model handle.
size_t mfdag_model_nodes(const struct MfdagModel *model);

// Copy the weighted adjacency `W` into a row-major `p × p` buffer.
//
// # Safety
// `model` must be a live handle and `buf` must hold `len` values.
enum MfdagStatus mfdag_model_adjacency(const struct MfdagModel *model, double *buf, size_t len);

// EM iterations the fit used.
//
// # Safety
// `model` must be null or a live model handle.
size_t mfdag_model_iterations(const struct MfdagModel *model);

// Serialize the model parameters as JSON (the on-disk model schema).
// Returns null on failure; free the result with [`mfdag_string_free`].
//
// # Safety
// `model` must be a live handle.
char *mfdag_model_to_json(const struct MfdagModel *model);

// Release a model handle.
//
// # Safety
// `model` must be null or a handle from this library that was not yet
// freed.
void mfdag_model_free(struct MfdagModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIFUN_DAG_H */
