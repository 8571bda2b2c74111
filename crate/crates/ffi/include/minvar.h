#ifndef MINVAR_H
#define MINVAR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum {
  MINVAR_STATUS_OK = 0,
  MINVAR_STATUS_NULL_POINTER = 1,
  MINVAR_STATUS_INVALID_ARGUMENT = 2,
  MINVAR_STATUS_DIMENSION = 3,
  MINVAR_STATUS_NUMERICAL = 4,
  MINVAR_STATUS_IO = 5,
  MINVAR_STATUS_FORMAT = 6,
  MINVAR_STATUS_PANIC = 7,
} MinvarStatus;

typedef enum {
  MINVAR_OBJECTIVE_SSL = 0,
  MINVAR_OBJECTIVE_GRAPH = 1,
  MINVAR_OBJECTIVE_DIRICHLET = 2,
} MinvarObjective;

/**
 * Sampled two-moons dataset.
 */
typedef struct MinvarDataset MinvarDataset;

/**
 * Feature network.
 */
typedef struct MinvarNetwork MinvarNetwork;

/**
 * Training options. A negative or NaN `lambda` selects the automatic weight.
 */
typedef struct {
  MinvarObjective objective;
  double lambda;
  double sigma;
  double learning_rate;
  size_t epochs;
  size_t batch_size;
  uint64_t seed;
  double max_grad_norm;
  bool centered_penalty;
} MinvarTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next call into this library on the same thread.
 */
const char *minvar_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *minvar_version(void);

/**
 * Samples `n` two-moons points.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
MinvarStatus minvar_moons_new(size_t n, double noise_std, uint64_t seed, MinvarDataset **out);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t minvar_moons_len(const MinvarDataset *dataset);

/**
 * Copies the n×2 coordinates into `out` (at least `2n` values).
 *
 * # Safety
 * `dataset` must be a live handle and `out` valid for `out_len` doubles.
 */
MinvarStatus minvar_moons_points(const MinvarDataset *dataset, double *out, size_t out_len);

/**
 * Copies the quadrant labels (0..4) into `out` (at least `n` values).
 *
 * # Safety
 * `dataset` must be a live handle and `out` valid for `out_len` values.
 */
MinvarStatus minvar_moons_labels(const MinvarDataset *dataset, uint32_t *out, size_t out_len);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void minvar_moons_free(MinvarDataset *dataset);

/**
 * Glorot-initialised tanh network.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
MinvarStatus minvar_network_new(size_t input_dim,
                                size_t output_dim,
                                size_t hidden_layers,
                                size_t hidden_width,
                                uint64_t seed,
                                MinvarNetwork **out);

/**
 * Loads a checkpoint written by `minvar train` or `minvar_network_save`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one handle.
 */
MinvarStatus minvar_network_load(const char *path, MinvarNetwork **out);

/**
 * # Safety
 * `network` must be a live handle and `path` a NUL-terminated string.
 */
MinvarStatus minvar_network_save(const MinvarNetwork *network, const char *path);

/**
 * # Safety
 * `network` must be null or a live handle.
 */
size_t minvar_network_input_dim(const MinvarNetwork *network);

/**
 * # Safety
 * `network` must be null or a live handle.
 */
size_t minvar_network_output_dim(const MinvarNetwork *network);

/**
 * Evaluates `n` input rows; writes n×output_dim features to `out`.
 *
 * # Safety
 * `points` must hold `n·input_dim` doubles and `out` `out_len` doubles.
 */
MinvarStatus minvar_network_forward(const MinvarNetwork *network,
                                    const double *points,
                                    size_t n,
                                    double *out,
                                    size_t out_len);

/**
 * Defaults used by `minvar train` for `objective`.
 */
MinvarTrainOptions minvar_train_options_default(MinvarObjective objective);

/**
 * Trains `network` in place on `n` points. On success the full-data
 * objective and penalty are written to the optional outputs. On failure the
 * network is left unchanged.
 *
 * # Safety
 * `network` must be a live handle, `points` hold `2n` doubles and `options`
 * point to a valid struct; the outputs may be null.
 */
MinvarStatus minvar_network_train(MinvarNetwork *network,
                                  const double *points,
                                  size_t n,
                                  const MinvarTrainOptions *options,
                                  double *out_objective,
                                  double *out_penalty);

/**
 * # Safety
 * `network` must be null or a handle not yet freed.
 */
void minvar_network_free(MinvarNetwork *network);

/**
 * Exact spectral embedding of `n` 2-D points: writes the n×p embedding
 * (normalised to `(1/n) ΦᵀΦ = I`) and, if `out_eigenvalues` is not null, the
 * `n` ascending Laplacian eigenvalues.
 *
 * # Safety
 * `points` must hold `2n` doubles, `out_embedding` `embedding_len` doubles and
 * `out_eigenvalues` (if not null) `eigenvalues_len` doubles.
 */
MinvarStatus minvar_spectral_embedding(const double *points,
                                       size_t n,
                                       double sigma,
                                       size_t p,
                                       bool drop_constant,
                                       double *out_embedding,
                                       size_t embedding_len,
                                       double *out_eigenvalues,
                                       size_t eigenvalues_len);

/**
 * Fits a ridge linear probe on the training features and writes its accuracy
 * on the test features to `out_accuracy`.
 *
 * # Safety
 * Feature buffers must hold `n·p` doubles, label buffers `n` values and
 * `out_accuracy` must be valid for one double.
 */
MinvarStatus minvar_probe_accuracy(const double *train_features,
                                   const uint32_t *train_labels,
                                   size_t n_train,
                                   const double *test_features,
                                   const uint32_t *test_labels,
                                   size_t n_test,
                                   size_t p,
                                   double ridge,
                                   double *out_accuracy);

/**
 * Runs the `minvar` command line with `argc` arguments (including the
 * program name) and returns its exit code.
 *
 * # Safety
 * `argv` must hold `argc` NUL-terminated strings.
 */
int minvar_cli_main(int argc, const char *const *argv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MINVAR_H */
