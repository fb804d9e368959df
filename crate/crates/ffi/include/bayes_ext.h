#ifndef BAYES_EXT_H
#define BAYES_EXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BxStatus {
  BX_STATUS_OK = 0,
  BX_STATUS_NULL_POINTER = 1,
  BX_STATUS_INVALID_ARGUMENT = 2,
  BX_STATUS_DOMAIN = 3,
  BX_STATUS_DEGENERATE = 4,
  BX_STATUS_CONVERGENCE = 5,
  BX_STATUS_GEOMETRY = 6,
  BX_STATUS_IO = 7,
  BX_STATUS_PANIC = 8,
} BxStatus;

typedef enum BxCirclePredictive {
  BX_CIRCLE_PREDICTIVE_MLE_PLUGIN = 0,
  BX_CIRCLE_PREDICTIVE_EXTENDED_PLUGIN = 1,
  BX_CIRCLE_PREDICTIVE_BAYESIAN_PREDICTIVE = 2,
} BxCirclePredictive;

typedef enum BxSpikedPredictive {
  BX_SPIKED_PREDICTIVE_BAYES_PLUGIN = 0,
  BX_SPIKED_PREDICTIVE_EXTENDED_PLUGIN = 1,
  BX_SPIKED_PREDICTIVE_MIXTURE = 2,
} BxSpikedPredictive;

/**
 * Summary of circle data: `n`, `x̄` and `σ²`.
 */
typedef struct BxCircleData BxCircleData;

/**
 * Posterior fit of the spiked model with its three predictive densities.
 */
typedef struct BxSpikedFit BxSpikedFit;

typedef struct BxRisk {
  double mean;
  double stderr;
} BxRisk;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *bx_version(void);

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`) and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t bx_last_error(char *buf, size_t len);

double bx_bessel_i0(double z);

double bx_log_bessel_i0(double z);

/**
 * `I₁(z)/I₀(z)`.
 */
double bx_bessel_ratio(double z);

/**
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_circle_data_new(size_t n,
                                 double x0,
                                 double x1,
                                 double sigma2,
                                 struct BxCircleData **data);

/**
 * # Safety
 * `data` must be null or a handle from [`bx_circle_data_new`] not yet freed.
 */
void bx_circle_data_free(struct BxCircleData *data);

/**
 * Posterior mean of `(cos ω, sin ω)`; writes two values.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_circle_extended_mean(const struct BxCircleData *data, double *mean);

/**
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_circle_log_density(const struct BxCircleData *data,
                                    enum BxCirclePredictive kind,
                                    double y0,
                                    double y1,
                                    double *value);

/**
 * Divergence from the model density at `omega_true` to the chosen predictive.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_circle_kl(const struct BxCircleData *data,
                           enum BxCirclePredictive kind,
                           double omega_true,
                           double *value);

/**
 * Monte Carlo risk of the three circle predictives; `risks` receives three
 * entries in [`BxCirclePredictive`] order.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_circle_risk(size_t n,
                             double sigma2,
                             size_t trials,
                             uint64_t seed,
                             double omega_true,
                             struct BxRisk *risks);

/**
 * Samples the posterior of the spiked model from `n × l` observations
 * (row-major) and builds the three predictives. `draws = 0` or
 * `burn_in = 0` selects the dimension-dependent default.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_spiked_fit_new(const double *samples,
                                size_t n,
                                size_t l,
                                size_t draws,
                                size_t burn_in,
                                uint64_t seed,
                                struct BxSpikedFit **fit);

/**
 * # Safety
 * `fit` must be null or a handle from [`bx_spiked_fit_new`] not yet freed.
 */
void bx_spiked_fit_free(struct BxSpikedFit *fit);

/**
 * Dimension `l` of the fit, or 0 for a null handle.
 *
 * # Safety
 * See the crate-level contract.
 */
size_t bx_spiked_fit_dim(const struct BxSpikedFit *fit);

/**
 * Post-burn-in acceptance rates of the λ and direction blocks; writes two values.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_spiked_acceptance(const struct BxSpikedFit *fit, double *rates);

/**
 * Bayes estimate `(λ̂, û)`; `u` receives `len = l` values.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_spiked_bayes_estimate(const struct BxSpikedFit *fit,
                                       double *lambda,
                                       double *u,
                                       size_t len);

/**
 * Posterior mean covariance `Σ̄`, row-major; `len` must be `l²`.
 *
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_spiked_extended_covariance(const struct BxSpikedFit *fit,
                                            double *sigma,
                                            size_t len);

/**
 * # Safety
 * See the crate-level contract.
 */
enum BxStatus bx_spiked_log_density(const struct BxSpikedFit *fit,
                                    enum BxSpikedPredictive kind,
                                    const double *y,
                                    size_t len,
                                    double *value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BAYES_EXT_H */
