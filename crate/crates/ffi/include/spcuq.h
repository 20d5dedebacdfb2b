#ifndef SPCUQ_H
#define SPCUQ_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SpcuqStatus {
  SPCUQ_STATUS_OK = 0,
  SPCUQ_STATUS_NULL_POINTER = 1,
  SPCUQ_STATUS_INVALID_ARGUMENT = 2,
  SPCUQ_STATUS_SHAPE = 3,
  SPCUQ_STATUS_NUMERIC = 4,
  SPCUQ_STATUS_DOMAIN = 5,
  SPCUQ_STATUS_INSUFFICIENT_DATA = 6,
  SPCUQ_STATUS_FORMAT = 7,
  SPCUQ_STATUS_IO = 8,
  SPCUQ_STATUS_CONFIG = 9,
  /**
   * Some trials of an experiment failed; the others were reported.
   */
  SPCUQ_STATUS_PARTIAL_FAILURE = 10,
  SPCUQ_STATUS_PANIC = 11,
} SpcuqStatus;

typedef enum SpcuqTask {
  SPCUQ_TASK_REGRESSION = 0,
  SPCUQ_TASK_CLASSIFICATION = 1,
} SpcuqTask;

/**
 * Opaque trained model.
 */
typedef struct SpcuqModel SpcuqModel;

/**
 * One regression prediction with plain and calibrated intervals.
 */
typedef struct SpcuqRegPrediction {
  double y_hat;
  double lower;
  double upper;
  double lower_calib;
  double upper_calib;
  double z;
  double z_upper;
  double z_lower;
  double sds;
} SpcuqRegPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *spcuq_version(void);

/**
 * Message of the most recent failed call on this thread, or NULL. Valid until
 * the next failing call on the same thread.
 */
const char *spcuq_last_error(void);

/**
 * Static name of a status code.
 */
const char *spcuq_status_name(enum SpcuqStatus status);

/**
 * `2ab/(a+b)` for positive `a`, `b`.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_harmonic_mean(double a, double b, double *out);

/**
 * Self-consistency discrepancy score of one `(MAR, MAR⁺, MAR⁻)` triple.
 *
 * # Safety
 * `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_sds(double total, double upper, double lower, double *out);

/**
 * `|MAR(t) − H(MAR⁺(t), MAR⁻(t))|` over `n` samples split at `t`.
 *
 * # Safety
 * `samples` must point to `n` doubles; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_self_consistency_discrepancy(double t,
                                                    const double *samples,
                                                    size_t n,
                                                    double *out);

/**
 * Classification SDS of a probability vector and its per-class total MAR estimates.
 *
 * # Safety
 * `softmax` and `z_total` must point to `k` doubles; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_sds_classification(const double *softmax,
                                          const double *z_total,
                                          size_t k,
                                          double *out);

/**
 * Interval scale factors `(s⁺, s⁻)` from the five head outputs.
 *
 * # Safety
 * `out_upper` and `out_lower` must be valid for one write each.
 */
enum SpcuqStatus spcuq_calibration_factors(double q_upper,
                                           double q_lower,
                                           double z,
                                           double z_upper,
                                           double z_lower,
                                           double *out_upper,
                                           double *out_lower);

/**
 * AUROC of `scores` with `labels[i] != 0` as the positive class (ties count one half).
 *
 * # Safety
 * `scores` and `labels` must point to `n` elements; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_auroc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Equal-width expected calibration error.
 *
 * # Safety
 * `confidences` and `correct` must point to `n` elements; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_ece(const double *confidences,
                           const uint8_t *correct,
                           size_t n,
                           size_t n_bins,
                           double *out);

/**
 * Spearman rank correlation with average ranks for ties.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_spearman(const double *a, const double *b, size_t n, double *out);

/**
 * Fraction of targets inside their closed interval.
 *
 * # Safety
 * `lower`, `upper` and `targets` must point to `n` doubles; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_picp(const double *lower,
                            const double *upper,
                            const double *targets,
                            size_t n,
                            double *out);

/**
 * Mean Winkler interval score at miscoverage level `alpha`.
 *
 * # Safety
 * `lower`, `upper` and `targets` must point to `n` doubles; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_winkler(const double *lower,
                               const double *upper,
                               const double *targets,
                               size_t n,
                               double alpha,
                               double *out);

/**
 * Run the experiment described by a JSON config file. `output_dir` may be
 * NULL to use the directory named in the config. Returns
 * `SPCUQ_STATUS_PARTIAL_FAILURE` when some trials failed.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string; `output_dir` NULL or one.
 */
enum SpcuqStatus spcuq_run_experiment(const char *config_path,
                                      const char *output_dir,
                                      size_t workers);

/**
 * Load a trained trial directory (`trial_<i>` of an experiment).
 *
 * # Safety
 * `trial_dir` must be a NUL-terminated string; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_model_load(const char *trial_dir, struct SpcuqModel **out);

/**
 * Release a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from [`spcuq_model_load`] and not be used afterwards.
 */
void spcuq_model_free(struct SpcuqModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_model_task(const struct SpcuqModel *model, enum SpcuqTask *out);

/**
 * Number of raw input features.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_model_input_dim(const struct SpcuqModel *model, size_t *out);

/**
 * 1 for regression, the number of classes for classification.
 *
 * # Safety
 * `model` must be a live handle; `out` must be valid for one write.
 */
enum SpcuqStatus spcuq_model_output_dim(const struct SpcuqModel *model, size_t *out);

/**
 * Predict `n` rows of `d` raw features (row-major) with a regression model.
 *
 * # Safety
 * `x` must point to `n * d` doubles and `out` to `n` writable records.
 */
enum SpcuqStatus spcuq_model_predict_regression(const struct SpcuqModel *model,
                                                const double *x,
                                                size_t n,
                                                size_t d,
                                                struct SpcuqRegPrediction *out);

/**
 * Predict `n` rows with a classification model. `probs` and `probs_calib`
 * receive `n * K` values (row-major, K from [`spcuq_model_output_dim`]);
 * `probs_calib` holds the gated, clamped, unnormalised corrections.
 * `sds`, `delta_c` and `gate` receive `n` values each. Any output may be NULL
 * to skip it.
 *
 * # Safety
 * `x` must point to `n * d` doubles; non-NULL outputs must have the sizes above.
 */
enum SpcuqStatus spcuq_model_predict_classification(const struct SpcuqModel *model,
                                                    const double *x,
                                                    size_t n,
                                                    size_t d,
                                                    double delta_0,
                                                    double *probs,
                                                    double *probs_calib,
                                                    double *sds,
                                                    double *delta_c,
                                                    uint8_t *gate);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPCUQ_H */
