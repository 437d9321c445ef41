#ifndef DEEP_CORAL_H
#define DEEP_CORAL_H

/* Generated by cbindgen from deep-coral-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code for every fallible call.
 */
typedef enum DcStatus {
  DC_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DC_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DC_STATUS_INVALID_UTF8 = 2,
  DC_STATUS_DIMENSION_MISMATCH = 3,
  DC_STATUS_DEGENERATE_BATCH = 4,
  DC_STATUS_NON_FINITE = 5,
  DC_STATUS_BAD_LABEL = 6,
  DC_STATUS_BAD_ARCHITECTURE = 7,
  DC_STATUS_LENGTH_MISMATCH = 8,
  DC_STATUS_PARSE_ERROR = 9,
  DC_STATUS_IO_ERROR = 10,
  DC_STATUS_CONFIG_ERROR = 11,
  DC_STATUS_DIVERGENCE = 12,
  /**
   * A panic was caught at the boundary.
   */
  DC_STATUS_INTERNAL = 13,
} DcStatus;

/**
 * Owned matrix handle.
 */
typedef struct DcMatrix DcMatrix;

/**
 * Owned network handle.
 */
typedef struct DcNetwork DcNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dc_version(void);

/**
 * Message for the most recent failure on this thread. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *dc_last_error_message(void);

/**
 * Creates a `rows x cols` matrix from row-major data.
 *
 * # Safety
 * `data` must point to `rows * cols` readable doubles; `out` must be a
 * valid location for a pointer.
 */
enum DcStatus dc_matrix_new(size_t rows, size_t cols, const double *data, struct DcMatrix **out);

/**
 * Frees a matrix handle; null is a no-op.
 *
 * # Safety
 * `matrix` must be null or a handle returned by this library that has not
 * been freed yet.
 */
void dc_matrix_free(struct DcMatrix *matrix);

/**
 * Row count, or 0 for a null handle.
 *
 * # Safety
 * `matrix` must be null or a live handle.
 */
size_t dc_matrix_rows(const struct DcMatrix *matrix);

/**
 * Column count, or 0 for a null handle.
 *
 * # Safety
 * `matrix` must be null or a live handle.
 */
size_t dc_matrix_cols(const struct DcMatrix *matrix);

/**
 * Copies the matrix out in row-major order.
 *
 * # Safety
 * `out` must point to `rows * cols` writable doubles.
 */
enum DcStatus dc_matrix_copy_data(const struct DcMatrix *matrix, double *out);

/**
 * Unbiased batch covariance of `features` as a new `d x d` matrix.
 *
 * # Safety
 * `features` must be a live handle; `out` must be a valid location.
 */
enum DcStatus dc_covariance(const struct DcMatrix *features, struct DcMatrix **out);

/**
 * Sum of squared entries.
 *
 * # Safety
 * `matrix` must be a live handle; `out` must point to a writable double.
 */
enum DcStatus dc_frobenius_sq(const struct DcMatrix *matrix, double *out);

/**
 * CORAL loss between two feature batches.
 *
 * # Safety
 * `source` and `target` must be live handles; `out` must point to a
 * writable double.
 */
enum DcStatus dc_coral_loss(const struct DcMatrix *source,
                            const struct DcMatrix *target,
                            double *out);

/**
 * Same value as [`dc_coral_loss`]; monitoring alias.
 *
 * # Safety
 * As [`dc_coral_loss`].
 */
enum DcStatus dc_coral_distance(const struct DcMatrix *source,
                                const struct DcMatrix *target,
                                double *out);

/**
 * Analytic CORAL gradients for both inputs, as two new matrices matching
 * the input shapes.
 *
 * # Safety
 * `source` and `target` must be live handles; `grad_source` and
 * `grad_target` must be valid locations.
 */
enum DcStatus dc_coral_grad(const struct DcMatrix *source,
                            const struct DcMatrix *target,
                            struct DcMatrix **grad_source,
                            struct DcMatrix **grad_target);

/**
 * Builds a seeded network from `dims[0..n_dims]` layer widths.
 *
 * # Safety
 * `dims` must point to `n_dims` readable size_t values; `out` must be a
 * valid location.
 */
enum DcStatus dc_network_init(const size_t *dims,
                              size_t n_dims,
                              double head_init_std,
                              uint64_t seed,
                              struct DcNetwork **out);

/**
 * Frees a network handle; null is a no-op.
 *
 * # Safety
 * `network` must be null or a handle returned by this library that has
 * not been freed yet.
 */
void dc_network_free(struct DcNetwork *network);

/**
 * Saves a checkpoint for the network.
 *
 * # Safety
 * `network` must be a live handle; `path` a NUL-terminated UTF-8 string.
 */
enum DcStatus dc_network_save(const struct DcNetwork *network, const char *path);

/**
 * Loads a checkpoint into a new network handle.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` a valid location.
 */
enum DcStatus dc_network_load(const char *path, struct DcNetwork **out);

/**
 * Forward pass: logits for a feature batch, as a new matrix.
 *
 * # Safety
 * `network` and `features` must be live handles; `out` a valid location.
 */
enum DcStatus dc_network_logits(const struct DcNetwork *network,
                                const struct DcMatrix *features,
                                struct DcMatrix **out);

/**
 * Classification accuracy of the network on a labeled batch. Labels are
 * class indices, one per row.
 *
 * # Safety
 * `network` and `features` must be live handles; `labels` must point to
 * `n_labels` readable uint32 values; `out` to a writable double.
 */
enum DcStatus dc_network_accuracy(const struct DcNetwork *network,
                                  const struct DcMatrix *features,
                                  const uint32_t *labels,
                                  size_t n_labels,
                                  double *out);

/**
 * Runs a full training experiment from config text (the same key=value
 * format the CLI accepts), writing metrics, checkpoint, and manifest into
 * `out_dir`.
 *
 * # Safety
 * Both arguments must be NUL-terminated UTF-8 strings.
 */
enum DcStatus dc_train_run(const char *config_text, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEEP_CORAL_H */
