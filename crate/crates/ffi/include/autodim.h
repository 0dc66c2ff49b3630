#ifndef AUTODIM_H
#define AUTODIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum AutodimStatus {
  AUTODIM_STATUS_OK = 0,
  AUTODIM_STATUS_NULL_POINTER = 1,
  AUTODIM_STATUS_INVALID_ARGUMENT = 2,
  AUTODIM_STATUS_CONFIG = 3,
  AUTODIM_STATUS_PARSE = 4,
  AUTODIM_STATUS_MISSING_FILE = 5,
  AUTODIM_STATUS_IO = 6,
  AUTODIM_STATUS_SCHEMA = 7,
  AUTODIM_STATUS_LABEL = 8,
  AUTODIM_STATUS_DIMENSION = 9,
  AUTODIM_STATUS_UNDEFINED_METRIC = 10,
  AUTODIM_STATUS_NON_FINITE_LOSS = 11,
  AUTODIM_STATUS_INTERNAL = 12,
  AUTODIM_STATUS_PANIC = 13,
} AutodimStatus;

/**
 * Per-field derived dimensions.
 */
typedef struct AutodimArchitecture AutodimArchitecture;

/**
 * Search and training settings.
 */
typedef struct AutodimConfig AutodimConfig;

/**
 * Train/validation/test splits with their schema.
 */
typedef struct AutodimDataset AutodimDataset;

/**
 * Test-split metrics of a retrained model.
 */
typedef struct AutodimEvalReport {
  double auc;
  double logloss;
  /**
   * Embedding parameters only.
   */
  uint64_t params;
  uint64_t n_examples;
} AutodimEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *autodim_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *autodim_version(void);

/**
 * Gumbel-softmax temperature at search step `t` under the default schedule.
 */
double autodim_temperature(uint64_t t);

/**
 * Embedding parameter count `Σ cardinality[m] × dim[m]`.
 *
 * # Safety
 * `cardinalities` and `dims` must each point to `n` readable values; `out`
 * must be writable.
 */
enum AutodimStatus autodim_param_count(const uint64_t *cardinalities,
                                       const uint64_t *dims,
                                       size_t n,
                                       uint64_t *out);

/**
 * Rank-statistic AUC of `scores` against 0/1 `labels`.
 *
 * # Safety
 * `scores` and `labels` must each point to `n` readable values; `out` must
 * be writable.
 */
enum AutodimStatus autodim_auc(const double *scores, const double *labels, size_t n, double *out);

/**
 * New configuration with default settings.
 */
struct AutodimConfig *autodim_config_new(void);

/**
 * Loads a TOML run configuration.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum AutodimStatus autodim_config_load(const char *path, struct AutodimConfig **out);

/**
 * Applies one `key=value` setting (dotted keys address sections).
 * The configuration is unchanged if the result would be invalid.
 *
 * # Safety
 * `cfg` must be a live handle; `assignment` a NUL-terminated string.
 */
enum AutodimStatus autodim_config_set(struct AutodimConfig *cfg, const char *assignment);

/**
 * # Safety
 * `cfg` must be null or a handle not yet freed.
 */
void autodim_config_free(struct AutodimConfig *cfg);

/**
 * Loads a delimited data file using the split settings of `cfg` (default
 * settings when `cfg` is null).
 *
 * # Safety
 * `path` must be a NUL-terminated string, `cfg` null or a live handle, `out`
 * writable.
 */
enum AutodimStatus autodim_dataset_load(const char *path,
                                        const struct AutodimConfig *cfg,
                                        struct AutodimDataset **out);

/**
 * Seeded three-field synthetic click data (`item`, `noise`, `context`),
 * split 0.8/0.1/0.1 with `split_seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum AutodimStatus autodim_dataset_synthetic(size_t rows,
                                             uint64_t seed,
                                             uint64_t split_seed,
                                             struct AutodimDataset **out);

/**
 * Number of feature fields, or 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t autodim_dataset_num_fields(const struct AutodimDataset *ds);

/**
 * Rows in the train, validation and test splits.
 *
 * # Safety
 * `ds` must be a live handle and `out` must point to 3 writable values.
 */
enum AutodimStatus autodim_dataset_split_sizes(const struct AutodimDataset *ds, size_t *out);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void autodim_dataset_free(struct AutodimDataset *ds);

/**
 * Pretrains, searches and derives an architecture.
 *
 * # Safety
 * `ds` and `cfg` must be live handles; `out` writable.
 */
enum AutodimStatus autodim_search(const struct AutodimDataset *ds,
                                  const struct AutodimConfig *cfg,
                                  struct AutodimArchitecture **out);

/**
 * Trains a fresh model at `arch` and reports test-split metrics.
 *
 * # Safety
 * `ds`, `arch` and `cfg` must be live handles; `report` writable.
 */
enum AutodimStatus autodim_retrain(const struct AutodimDataset *ds,
                                   const struct AutodimArchitecture *arch,
                                   const struct AutodimConfig *cfg,
                                   struct AutodimEvalReport *report);

/**
 * Number of fields, or 0 for a null handle.
 *
 * # Safety
 * `arch` must be null or a live handle.
 */
size_t autodim_architecture_num_fields(const struct AutodimArchitecture *arch);

/**
 * Embedding parameter count, or 0 for a null handle.
 *
 * # Safety
 * `arch` must be null or a live handle.
 */
uint64_t autodim_architecture_param_count(const struct AutodimArchitecture *arch);

/**
 * Copies the derived dimension of each field into `out` (`len` must equal
 * the field count).
 *
 * # Safety
 * `arch` must be a live handle and `out` point to `len` writable values.
 */
enum AutodimStatus autodim_architecture_dims(const struct AutodimArchitecture *arch,
                                             uint64_t *out,
                                             size_t len);

/**
 * Writes the architecture as TOML.
 *
 * # Safety
 * `arch` must be a live handle and `path` a NUL-terminated string.
 */
enum AutodimStatus autodim_architecture_save(const struct AutodimArchitecture *arch,
                                             const char *path);

/**
 * Reads an architecture written by `autodim_architecture_save` or the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AutodimStatus autodim_architecture_load(const char *path, struct AutodimArchitecture **out);

/**
 * # Safety
 * `arch` must be null or a handle not yet freed.
 */
void autodim_architecture_free(struct AutodimArchitecture *arch);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTODIM_H */
