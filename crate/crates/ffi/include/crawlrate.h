#ifndef CRAWLRATE_H
#define CRAWLRATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CrStatus {
  CR_STATUS_OK = 0,
  CR_STATUS_INVALID_ARGUMENT = 1,
  CR_STATUS_INSUFFICIENT_DATA = 2,
  CR_STATUS_PARSE = 3,
  CR_STATUS_CONFIG = 4,
  CR_STATUS_IO = 5,
  CR_STATUS_NULL_POINTER = 6,
  CR_STATUS_PANIC = 7,
} CrStatus;

typedef enum CrSolveStatus {
  CR_SOLVE_STATUS_CONVERGED = 0,
  CR_SOLVE_STATUS_CLAMPED_HIGH = 1,
  CR_SOLVE_STATUS_NO_SOLUTION_CLAMPED_LOW = 2,
} CrSolveStatus;

typedef enum CrSamRegime {
  CR_SAM_REGIME_ONE_TIMESCALE = 0,
  CR_SAM_REGIME_TWO_TIMESCALE = 1,
  CR_SAM_REGIME_CONJECTURE = 2,
  CR_SAM_REGIME_EXPERIMENTAL = 3,
  CR_SAM_REGIME_INVALID = 4,
  CR_SAM_REGIME_UNKNOWN = 5,
} CrSamRegime;

/**
 * Opaque online or offline estimator.
 */
typedef struct CrEstimator CrEstimator;

/**
 * Opaque change trace.
 */
typedef struct CrTrace CrTrace;

typedef struct CrSolveReport {
  double estimate;
  enum CrSolveStatus status;
  uint64_t iterations;
  double residual;
} CrSolveReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *cr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cr_version(void);

/**
 * Creates an estimator from a JSON spec such as `{"kind": "sa", "eta": "poly:0.75"}`.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CrStatus cr_estimator_new(const char *spec_json, double rate_p, struct CrEstimator **out);

/**
 * Feeds one access: the gap since the previous access and whether a change was seen.
 *
 * # Safety
 * `est` must come from [`cr_estimator_new`] and not be freed.
 */
enum CrStatus cr_estimator_observe(struct CrEstimator *est, double tau, bool changed);

/**
 * Current estimate. Returns `CR_STATUS_INSUFFICIENT_DATA` before the first observation.
 *
 * # Safety
 * `est` must be a live handle and `out` a valid pointer.
 */
enum CrStatus cr_estimator_estimate(const struct CrEstimator *est, double *out);

/**
 * Changes the access rate used by subsequent updates.
 *
 * # Safety
 * `est` must be a live handle.
 */
enum CrStatus cr_estimator_set_rate(struct CrEstimator *est, double rate_p);

/**
 * Number of observations consumed; 0 for a null handle.
 *
 * # Safety
 * `est` must be null or a live handle.
 */
uint64_t cr_estimator_steps(const struct CrEstimator *est);

/**
 * # Safety
 * `est` must be null or a handle not yet freed.
 */
void cr_estimator_free(struct CrEstimator *est);

/**
 * Maximum-likelihood change rate from `n` (gap, indicator) pairs.
 *
 * # Safety
 * `taus` and `indicators` must point to `n` values; `out` must be valid.
 */
enum CrStatus cr_mle_solve(const double *taus,
                           const uint8_t *indicators,
                           size_t n,
                           double clamp_min,
                           double clamp_max,
                           double tol,
                           struct CrSolveReport *out);

/**
 * Moment-matching change rate from `n` (gap, indicator) pairs.
 *
 * # Safety
 * Same as [`cr_mle_solve`].
 */
enum CrStatus cr_mm_solve(const double *taus,
                          const uint8_t *indicators,
                          size_t n,
                          double clamp_min,
                          double clamp_max,
                          double tol,
                          struct CrSolveReport *out);

/**
 * Crawl rates maximising weighted freshness under `sum(rates) = budget`.
 * `objective_out` may be null.
 *
 * # Safety
 * `deltas`, `weights` and `rates_out` must point to `n` values.
 */
enum CrStatus cr_optimize_rates(const double *deltas,
                                const double *weights,
                                size_t n,
                                double budget,
                                double tol,
                                double *rates_out,
                                double *objective_out);

/**
 * `sum w_i p_i / (p_i + delta_i)`.
 *
 * # Safety
 * The three arrays must hold `n` values; `out` must be valid.
 */
enum CrStatus cr_freshness_objective(const double *rates,
                                     const double *deltas,
                                     const double *weights,
                                     size_t n,
                                     double *out);

/**
 * Regime of the momentum estimator with `beta_k = (k+1)^-beta` and
 * `eta_k = (k+1)^-eta`.
 *
 * # Safety
 * `out` must be valid.
 */
enum CrStatus cr_classify_sam(double beta, double eta, double omega, enum CrSamRegime *out);

/**
 * Simulates `n` accesses of a page; writes indicators (0/1) and gaps.
 *
 * # Safety
 * `indicators_out` and `taus_out` must have room for `n` values.
 */
enum CrStatus cr_simulate_indicators(double delta,
                                     double rate_p,
                                     size_t n,
                                     uint64_t seed,
                                     uint8_t *indicators_out,
                                     double *taus_out);

/**
 * Parses a trace from text, one timestamp per line.
 *
 * # Safety
 * `text` must be NUL-terminated and `out` valid.
 */
enum CrStatus cr_trace_parse(const char *text, struct CrTrace **out);

/**
 * Number of events; 0 for a null handle.
 *
 * # Safety
 * `trace` must be null or a live handle.
 */
size_t cr_trace_len(const struct CrTrace *trace);

/**
 * Copies up to `capacity` event times into `out`; `written` receives the count.
 *
 * # Safety
 * `out` must have room for `capacity` values; `written` must be valid.
 */
enum CrStatus cr_trace_events(const struct CrTrace *trace,
                              double *out,
                              size_t capacity,
                              size_t *written);

/**
 * `(events - 1) / span`.
 *
 * # Safety
 * `trace` must be a live handle and `out` valid.
 */
enum CrStatus cr_trace_change_rate(const struct CrTrace *trace, double *out);

/**
 * # Safety
 * `trace` must be null or a handle not yet freed.
 */
void cr_trace_free(struct CrTrace *trace);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRAWLRATE_H */
