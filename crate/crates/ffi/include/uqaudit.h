#ifndef UQAUDIT_H
#define UQAUDIT_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UqStatus {
  UQ_STATUS_OK = 0,
  UQ_STATUS_NULL_POINTER = 1,
  UQ_STATUS_INVALID_ARGUMENT = 2,
  UQ_STATUS_VALIDATION = 3,
  UQ_STATUS_CONFIG = 4,
  UQ_STATUS_IO = 5,
  UQ_STATUS_RUNTIME = 6,
  UQ_STATUS_PANIC = 7,
} UqStatus;

typedef enum UqParityMetric {
  UQ_PARITY_METRIC_EQUALIZED_ODDS_TPR = 0,
  UQ_PARITY_METRIC_EQUALIZED_ODDS_FPR = 1,
  UQ_PARITY_METRIC_DISPARATE_IMPACT = 2,
  UQ_PARITY_METRIC_STATISTICAL_PARITY_DIFFERENCE = 3,
  UQ_PARITY_METRIC_ACCURACY_PARITY = 4,
  UQ_PARITY_METRIC_LABEL_STABILITY_RATIO = 5,
  UQ_PARITY_METRIC_JITTER_PARITY = 6,
  UQ_PARITY_METRIC_STD_PARITY = 7,
  UQ_PARITY_METRIC_IQR_PARITY = 8,
} UqParityMetric;

typedef enum UqClassification {
  UQ_CLASSIFICATION_PARITY = 0,
  UQ_CLASSIFICATION_DISCRIMINATION = 1,
  UQ_CLASSIFICATION_REVERSE_DISCRIMINATION = 2,
  UQ_CLASSIFICATION_UNDEFINED = 3,
} UqClassification;

/**
 * Parsed audit configuration.
 */
typedef struct UqConfig UqConfig;

/**
 * Member-by-sample predictive matrix.
 */
typedef struct UqMatrix UqMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call on the same thread.
 */
const char *uq_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *uq_version(void);

/**
 * Builds a matrix from `members * samples` probabilities in row-major
 * order (member-major).
 *
 * # Safety
 * `probabilities` must point to `members * samples` doubles; `out` must be
 * writable.
 */
enum UqStatus uq_matrix_new(const double *probabilities,
                            size_t members,
                            size_t samples,
                            double threshold,
                            struct UqMatrix **out_matrix);

/**
 * # Safety
 * `matrix` must come from [`uq_matrix_new`] and not be used afterwards.
 */
void uq_matrix_free(struct UqMatrix *matrix);

/**
 * Number of samples (columns).
 *
 * # Safety
 * `matrix` must be a live handle.
 */
enum UqStatus uq_matrix_samples(const struct UqMatrix *matrix, size_t *out_samples);

/**
 * Per-sample label stability; `out_values` holds `len == samples` doubles.
 *
 * # Safety
 * `matrix` must be a live handle and `out_values` writable for `len` doubles.
 */
enum UqStatus uq_matrix_label_stability(struct UqMatrix *matrix, double *out_values, size_t len);

/**
 * Per-sample jitter.
 *
 * # Safety
 * As for [`uq_matrix_label_stability`].
 */
enum UqStatus uq_matrix_jitter(struct UqMatrix *matrix, double *out_values, size_t len);

/**
 * Per-sample standard deviation (denominator b - 1).
 *
 * # Safety
 * As for [`uq_matrix_label_stability`].
 */
enum UqStatus uq_matrix_std(struct UqMatrix *matrix, double *out_values, size_t len);

/**
 * Per-sample interquartile range.
 *
 * # Safety
 * As for [`uq_matrix_label_stability`].
 */
enum UqStatus uq_matrix_iqr(struct UqMatrix *matrix, double *out_values, size_t len);

/**
 * Mean pairwise jitter over all member pairs.
 *
 * # Safety
 * `matrix` must be a live handle; `out_jitter` writable.
 */
enum UqStatus uq_matrix_mean_jitter(const struct UqMatrix *matrix, double *out_jitter);

/**
 * Split conformal quantile of `n` nonconformity scores; +inf when the
 * calibration set is too small for `alpha`.
 *
 * # Safety
 * `scores` must point to `n` doubles; `out_q_hat` writable.
 */
enum UqStatus uq_conformal_quantile(const double *scores,
                                    size_t n,
                                    double alpha,
                                    bool uncorrected,
                                    double *out_q_hat);

/**
 * Jackknife+ bounds from `n` leave-one-out centers at the test point and
 * their residuals. Out-of-range order indices give -inf / +inf.
 *
 * # Safety
 * `centers` and `residuals` must point to `n` doubles; outputs writable.
 */
enum UqStatus uq_jackknife_plus_bounds(const double *centers,
                                       const double *residuals,
                                       size_t n,
                                       double alpha,
                                       double *out_lower,
                                       double *out_upper);

/**
 * `dis - priv`. NaN inputs mark undefined values; the result is NaN when
 * undefined.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum UqStatus uq_parity_difference(double dis, double privileged, double *out_value);

/**
 * `dis / priv`; NaN when undefined or `priv` is zero.
 *
 * # Safety
 * `out_value` must be writable.
 */
enum UqStatus uq_parity_ratio(double dis, double privileged, double *out_value);

/**
 * Classifies a parity value (NaN = undefined).
 *
 * # Safety
 * `out_class` must be writable.
 */
enum UqStatus uq_classify(enum UqParityMetric metric,
                          double value,
                          bool favorable_positive,
                          double tolerance,
                          enum UqClassification *out_class);

/**
 * Parses a YAML or JSON audit config.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_config` writable.
 */
enum UqStatus uq_config_load(const char *path, struct UqConfig **out_config);

/**
 * # Safety
 * `config` must come from [`uq_config_load`] and not be used afterwards.
 */
void uq_config_free(struct UqConfig *config);

/**
 * Ensemble size the config resolved to.
 *
 * # Safety
 * `config` must be a live handle; `out_size` writable.
 */
enum UqStatus uq_config_ensemble_size(const struct UqConfig *config, size_t *out_size);

/**
 * Runs every (seed, model) pair of the config, persisting records into
 * `out_dir`. Completed records are resumed. `threads` = 0 uses every
 * core.
 *
 * # Safety
 * `config` must be a live handle, `out_dir` NUL-terminated, outputs
 * writable.
 */
enum UqStatus uq_audit_run(const struct UqConfig *config,
                           const char *out_dir,
                           size_t threads,
                           size_t *out_runs,
                           size_t *out_failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQAUDIT_H */
