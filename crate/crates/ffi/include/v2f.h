/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef V2F_H
#define V2F_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum V2fStatus {
  V2F_STATUS_OK = 0,
  V2F_STATUS_NULL_POINTER = 1,
  V2F_STATUS_INVALID_ARGUMENT = 2,
  V2F_STATUS_CONFIG = 3,
  V2F_STATUS_SHAPE = 4,
  V2F_STATUS_SIZE = 5,
  V2F_STATUS_RANGE = 6,
  V2F_STATUS_FORMAT = 7,
  V2F_STATUS_PROTOCOL = 8,
  V2F_STATUS_NON_FINITE = 9,
  V2F_STATUS_SINGULAR = 10,
  V2F_STATUS_IO = 11,
  V2F_STATUS_PANIC = 12,
} V2fStatus;

// A dataset of fMRI samples and stimulus embeddings.
typedef struct V2fDataset V2fDataset;

// A trained autoencoder with an optional semantic-to-neural mapper.
typedef struct V2fModel V2fModel;

// Retrieval accuracy over repeated candidate draws.
typedef struct V2fRetrieval {
  double mean;
  double sd;
} V2fRetrieval;

// Voxel-level agreement of one prediction with a set of trials.
typedef struct V2fVoxelMetrics {
  double mse;
  // NaN when every trial is constant.
  double pearson;
  double cosine;
} V2fVoxelMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null if none.
//
// The pointer stays valid until the next failing call on the same thread.
const char *v2f_last_error(void);

// Library version as a static NUL-terminated string.
const char *v2f_version(void);

// Samples a dataset from the default synthetic world with `seed`.
//
// # Safety
// `out` must be a valid pointer; on success it receives a handle to free
// with [`v2f_dataset_free`].
enum V2fStatus v2f_dataset_generate(uint64_t seed,
                                    size_t n_train,
                                    size_t n_test,
                                    uint32_t sessions,
                                    struct V2fDataset **out);

// Loads a dataset directory.
//
// # Safety
// `dir` must be a NUL-terminated path and `out` a valid pointer.
enum V2fStatus v2f_dataset_load(const char *dir, struct V2fDataset **out);

// Writes a dataset directory.
//
// # Safety
// `data` must come from this library and `dir` be a NUL-terminated path.
enum V2fStatus v2f_dataset_save(const struct V2fDataset *data, const char *dir);

// Number of samples, or 0 for a null handle.
//
// # Safety
// `data` must be null or come from this library.
size_t v2f_dataset_len(const struct V2fDataset *data);

// Releases a dataset; null is ignored.
//
// # Safety
// `data` must be null or an unreleased handle from this library.
void v2f_dataset_free(struct V2fDataset *data);

// Loads an autoencoder checkpoint and, when `s2n_dir` is not null, a
// mapper checkpoint.
//
// # Safety
// Paths must be NUL-terminated (or null for `s2n_dir`); `out` must be valid.
enum V2fStatus v2f_model_load(const char *vae_dir, const char *s2n_dir, struct V2fModel **out);

// Shape of the latent token grid.
//
// # Safety
// `model` must come from this library; `tokens` and `dim` must be valid.
enum V2fStatus v2f_model_latent_shape(const struct V2fModel *model, size_t *tokens, size_t *dim);

// Releases a model; null is ignored.
//
// # Safety
// `model` must be null or an unreleased handle from this library.
void v2f_model_free(struct V2fModel *model);

// Synthesizes `v_out` voxels from a row-major `rows × cols` embedding grid.
//
// With a mapper the latent is `s2n(grid) + nf·ε` with noise drawn from
// `seed`; without one the grid is decoded directly and `nf` must be 0.
//
// # Safety
// `embedding` must hold `rows·cols` values and `out` room for `v_out`.
enum V2fStatus v2f_synthesize(const struct V2fModel *model,
                              const double *embedding,
                              size_t rows,
                              size_t cols,
                              double nf,
                              uint64_t seed,
                              double *out,
                              size_t v_out);

// Top-1 retrieval of `n_queries` row-major query embeddings against a
// gallery, where `query_ids` and `gallery_ids` name the stimuli.
//
// # Safety
// Arrays must hold `n·dim` values and `n` ids respectively; `out` must be
// valid.
enum V2fStatus v2f_retrieval_accuracy(const double *queries,
                                      const uint32_t *query_ids,
                                      size_t n_queries,
                                      const double *gallery,
                                      const uint32_t *gallery_ids,
                                      size_t n_gallery,
                                      size_t dim,
                                      size_t candidates,
                                      size_t repeats,
                                      uint64_t seed,
                                      struct V2fRetrieval *out);

// Voxel metrics of `pred` (length `v`) against `n_trials` row-major trials.
//
// # Safety
// `pred` must hold `v` values, `trials` `n_trials·v`; `out` must be valid.
enum V2fStatus v2f_voxel_metrics(const double *pred,
                                 const double *trials,
                                 size_t n_trials,
                                 size_t v,
                                 struct V2fVoxelMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* V2F_H */
