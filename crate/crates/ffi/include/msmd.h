#ifndef MSMD_H
#define MSMD_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every entry point.
 */
typedef enum MsmdStatus {
  MSMD_STATUS_OK = 0,
  MSMD_STATUS_NULL_POINTER = 1,
  MSMD_STATUS_INVALID_ARGUMENT = 2,
  MSMD_STATUS_CONFIG = 3,
  MSMD_STATUS_NUMERICAL = 4,
  MSMD_STATUS_LAYOUT = 5,
  MSMD_STATUS_IO = 6,
  /**
   * A proposition suite ran and found violations.
   */
  MSMD_STATUS_VIOLATION = 7,
  MSMD_STATUS_PANIC = 8,
  MSMD_STATUS_OTHER = 9,
} MsmdStatus;

/**
 * A resolved experiment configuration.
 */
typedef struct MsmdExperiment MsmdExperiment;

/**
 * A multivariate Gaussian over scalar variables.
 */
typedef struct MsmdGaussian MsmdGaussian;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a successful call.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *msmd_last_error(void);

/**
 * Library version as a static string.
 */
const char *msmd_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void msmd_string_free(char *s);

/**
 * Builds a Gaussian over scalar variables `var_ids[0..dim]` from a mean and a
 * row-major `dim × dim` covariance.
 *
 * # Safety
 * `var_ids` and `mean` must hold `dim` elements, `covariance` `dim * dim`.
 */
enum MsmdStatus msmd_gaussian_from_moments(size_t dim,
                                           const size_t *var_ids,
                                           const double *mean,
                                           const double *covariance,
                                           struct MsmdGaussian **out);

/**
 * # Safety
 * `g` must come from this library and not have been freed. Null is ignored.
 */
void msmd_gaussian_free(struct MsmdGaussian *g);

/**
 * Total dimension of `g`, or 0 if `g` is null.
 *
 * # Safety
 * `g` must be null or a live handle.
 */
size_t msmd_gaussian_dim(const struct MsmdGaussian *g);

/**
 * Writes the mean into `out[0..len]`; `len` must equal the dimension.
 *
 * # Safety
 * `g` must be a live handle and `out` hold `len` doubles.
 */
enum MsmdStatus msmd_gaussian_mean(const struct MsmdGaussian *g, double *out, size_t len);

/**
 * Writes the row-major covariance into `out[0..len]`; `len` must equal dim².
 *
 * # Safety
 * `g` must be a live handle and `out` hold `len` doubles.
 */
enum MsmdStatus msmd_gaussian_covariance(const struct MsmdGaussian *g, double *out, size_t len);

/**
 * `KL(p ‖ g)` for densities over the same variables.
 *
 * # Safety
 * `p` and `g` must be live handles; `out` must be writable.
 */
enum MsmdStatus msmd_gaussian_kl(const struct MsmdGaussian *p,
                                 const struct MsmdGaussian *g,
                                 double *out);

/**
 * Weighted geometric pooling `∝ Π p_k^{w_k}` of `n` densities over the same variables.
 *
 * # Safety
 * `densities` and `weights` must hold `n` elements; each handle must be live.
 */
enum MsmdStatus msmd_gaussian_geometric_mean(const struct MsmdGaussian *const *densities,
                                             const double *weights,
                                             size_t n,
                                             struct MsmdGaussian **out);

/**
 * Marginal of `g` over the scalar variables `keep[0..n]`.
 *
 * # Safety
 * `g` must be a live handle and `keep` hold `n` ids.
 */
enum MsmdStatus msmd_gaussian_marginalize(const struct MsmdGaussian *g,
                                          const size_t *keep,
                                          size_t n,
                                          struct MsmdGaussian **out);

/**
 * Loads a named preset (`localization-fig2`, `localization-fig3-sweep`, `mapping-desk`).
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum MsmdStatus msmd_experiment_from_preset(const char *name, struct MsmdExperiment **out);

/**
 * Parses and validates a JSON experiment config.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` must be writable.
 */
enum MsmdStatus msmd_experiment_from_json(const char *json, struct MsmdExperiment **out);

/**
 * # Safety
 * `e` must come from this library and not have been freed. Null is ignored.
 */
void msmd_experiment_free(struct MsmdExperiment *e);

/**
 * Overrides the round count.
 *
 * # Safety
 * `e` must be a live handle.
 */
enum MsmdStatus msmd_experiment_set_rounds(struct MsmdExperiment *e, size_t rounds);

/**
 * Replaces every seed of the experiment.
 *
 * # Safety
 * `e` must be a live handle.
 */
enum MsmdStatus msmd_experiment_set_seed(struct MsmdExperiment *e, uint64_t seed);

/**
 * Sets the output directory.
 *
 * # Safety
 * `e` must be a live handle and `dir` a NUL-terminated string.
 */
enum MsmdStatus msmd_experiment_set_output(struct MsmdExperiment *e, const char *dir);

/**
 * Sets the worker count; 0 uses every core.
 *
 * # Safety
 * `e` must be a live handle.
 */
enum MsmdStatus msmd_experiment_set_jobs(struct MsmdExperiment *e, size_t jobs);

/**
 * Resolved config as pretty JSON; release with [`msmd_string_free`].
 *
 * # Safety
 * `e` must be a live handle; `out` must be writable.
 */
enum MsmdStatus msmd_experiment_to_json(const struct MsmdExperiment *e, char **out);

/**
 * Runs the experiment, writing traces, summary and manifest to its output directory.
 * `runs_written` (may be null) receives the number of trace files.
 *
 * # Safety
 * `e` must be a live handle; `runs_written` must be null or writable.
 */
enum MsmdStatus msmd_experiment_run(const struct MsmdExperiment *e, size_t *runs_written);

/**
 * Runs a proposition suite. `report_json` (may be null) receives the JSON report,
 * released with [`msmd_string_free`]. Returns `Violation` if any enforced check failed.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `report_json` must be null or writable.
 */
enum MsmdStatus msmd_verify(const char *name, uint64_t seed, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MSMD_H */
