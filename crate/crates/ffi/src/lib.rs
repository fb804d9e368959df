//! C interface. Every fallible call returns a [`BxStatus`] and writes results
//! through out-pointers; the message of the last failure on the calling thread
//! is available from [`bx_last_error`]. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free` function.
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the number of elements the
//! function documents; handles must come from the matching constructor and
//! not have been freed. Null pointers are reported as
//! [`BxStatus::NullPointer`].

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector, Vector2};

use bayes_ext::circle::{
    bessel_i0, bessel_ratio, default_kl_rule, extended_plugin_mean, kl_bayesian_predictive_gh, kl_true_vs_predictive,
    log_bessel_i0, CircleData, CirclePredictive,
};
use bayes_ext::risk::{run_circle_risk, CircleTrialConfig};
use bayes_ext::spiked::{sample_posterior, FittedPredictives, McmcConfig, SpikedData, SpikedPrior};
use bayes_ext::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Degenerate = 4,
    Convergence = 5,
    Geometry = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BxCirclePredictive {
    MlePlugin = 0,
    ExtendedPlugin = 1,
    BayesianPredictive = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BxSpikedPredictive {
    BayesPlugin = 0,
    ExtendedPlugin = 1,
    Mixture = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BxRisk {
    pub mean: f64,
    pub stderr: f64,
}

/// Summary of circle data: `n`, `x̄` and `σ²`.
pub struct BxCircleData {
    data: CircleData,
}

/// Posterior fit of the spiked model with its three predictive densities.
pub struct BxSpikedFit {
    fitted: FittedPredictives,
    acceptance: [f64; 2],
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn set_error(msg: String) {
    LAST_ERROR.with(|m| *m.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BxStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            BxStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            match e {
                Error::Domain(_) => BxStatus::Domain,
                Error::Convergence { .. } => BxStatus::Convergence,
                Error::Degenerate(_) => BxStatus::Degenerate,
                Error::Geometry(_) => BxStatus::Geometry,
                Error::Argument(_) => BxStatus::InvalidArgument,
                Error::Io(_) => BxStatus::Io,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            BxStatus::Panic
        }
    }
}

fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: the caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: non-null handles come from the matching constructor.
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` readable values at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: the caller guarantees `len` writable values at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bx_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|m| {
        let msg = m.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub extern "C" fn bx_bessel_i0(z: f64) -> f64 {
    bessel_i0(z)
}

#[no_mangle]
pub extern "C" fn bx_log_bessel_i0(z: f64) -> f64 {
    log_bessel_i0(z)
}

/// `I₁(z)/I₀(z)`.
#[no_mangle]
pub extern "C" fn bx_bessel_ratio(z: f64) -> f64 {
    bessel_ratio(z)
}

/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_data_new(
    n: usize,
    x0: f64,
    x1: f64,
    sigma2: f64,
    data: *mut *mut BxCircleData,
) -> BxStatus {
    guard(|| {
        let slot = out(data, "data")?;
        let d = CircleData::with_variance(n, Vector2::new(x0, x1), sigma2)?;
        *slot = Box::into_raw(Box::new(BxCircleData { data: d }));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from [`bx_circle_data_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_data_free(data: *mut BxCircleData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Posterior mean of `(cos ω, sin ω)`; writes two values.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_extended_mean(data: *const BxCircleData, mean: *mut f64) -> BxStatus {
    guard(|| {
        let d = handle(data, "data")?;
        let m = extended_plugin_mean(&d.data).mean;
        slice_mut(mean, 2, "mean")?.copy_from_slice(m.as_slice());
        Ok(())
    })
}

fn circle_predictive(d: &CircleData, kind: BxCirclePredictive) -> Result<CirclePredictive, Fail> {
    Ok(match kind {
        BxCirclePredictive::MlePlugin => CirclePredictive::bayes_plugin(d)?,
        BxCirclePredictive::ExtendedPlugin => CirclePredictive::extended_plugin(d),
        BxCirclePredictive::BayesianPredictive => CirclePredictive::bayesian(d),
    })
}

/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_log_density(
    data: *const BxCircleData,
    kind: BxCirclePredictive,
    y0: f64,
    y1: f64,
    value: *mut f64,
) -> BxStatus {
    guard(|| {
        let d = handle(data, "data")?;
        let slot = out(value, "value")?;
        *slot = circle_predictive(&d.data, kind)?.log_density(&Vector2::new(y0, y1));
        Ok(())
    })
}

/// Divergence from the model density at `omega_true` to the chosen predictive.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_kl(
    data: *const BxCircleData,
    kind: BxCirclePredictive,
    omega_true: f64,
    value: *mut f64,
) -> BxStatus {
    guard(|| {
        let d = handle(data, "data")?;
        let slot = out(value, "value")?;
        *slot = match kind {
            BxCirclePredictive::BayesianPredictive => {
                kl_bayesian_predictive_gh(omega_true, &d.data, &default_kl_rule())
            }
            _ => kl_true_vs_predictive(omega_true, &circle_predictive(&d.data, kind)?),
        };
        Ok(())
    })
}

/// Monte Carlo risk of the three circle predictives; `risks` receives three
/// entries in [`BxCirclePredictive`] order.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_circle_risk(
    n: usize,
    sigma2: f64,
    trials: usize,
    seed: u64,
    omega_true: f64,
    risks: *mut BxRisk,
) -> BxStatus {
    guard(|| {
        if risks.is_null() {
            return Err(Fail::Null("risks"));
        }
        let cfg = CircleTrialConfig {
            n,
            sigma2,
            trials,
            seed,
            omega_true,
            ..Default::default()
        };
        let est = run_circle_risk(&cfg)?;
        // SAFETY: the caller provides room for three entries.
        let dst = unsafe { std::slice::from_raw_parts_mut(risks, 3) };
        for (d, r) in dst.iter_mut().zip(&est.risks) {
            *d = BxRisk {
                mean: r.mean,
                stderr: r.stderr,
            };
        }
        Ok(())
    })
}

/// Samples the posterior of the spiked model from `n × l` observations
/// (row-major) and builds the three predictives. `draws = 0` or
/// `burn_in = 0` selects the dimension-dependent default.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_fit_new(
    samples: *const f64,
    n: usize,
    l: usize,
    draws: usize,
    burn_in: usize,
    seed: u64,
    fit: *mut *mut BxSpikedFit,
) -> BxStatus {
    guard(|| {
        let slot = out(fit, "fit")?;
        if n < 2 || l < 2 {
            return Err(Error::Argument("need n ≥ 2 and l ≥ 2".into()).into());
        }
        let len = n.checked_mul(l).ok_or(Error::Argument("n × l overflows".into()))?;
        let xs = DMatrix::from_row_slice(n, l, slice(samples, len, "samples")?);
        let data = SpikedData::from_rows(&xs)?;
        let base = McmcConfig::for_dimension(l, seed);
        let cfg = McmcConfig {
            n_draws: if draws == 0 { base.n_draws } else { draws },
            burn_in: if burn_in == 0 { base.burn_in } else { burn_in },
            ..base
        };
        let post = sample_posterior(&SpikedPrior::default(), &data, &cfg)?;
        let fitted = FittedPredictives::from_draws(&post)?;
        *slot = Box::into_raw(Box::new(BxSpikedFit {
            fitted,
            acceptance: post.acceptance_rates,
            dim: l,
        }));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from [`bx_spiked_fit_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_fit_free(fit: *mut BxSpikedFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Dimension `l` of the fit, or 0 for a null handle.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_fit_dim(fit: *const BxSpikedFit) -> usize {
    handle(fit, "fit").map(|f| f.dim).unwrap_or(0)
}

/// Post-burn-in acceptance rates of the λ and direction blocks; writes two values.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_acceptance(fit: *const BxSpikedFit, rates: *mut f64) -> BxStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        slice_mut(rates, 2, "rates")?.copy_from_slice(&f.acceptance);
        Ok(())
    })
}

/// Bayes estimate `(λ̂, û)`; `u` receives `len = l` values.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_bayes_estimate(
    fit: *const BxSpikedFit,
    lambda: *mut f64,
    u: *mut f64,
    len: usize,
) -> BxStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if len != f.dim {
            return Err(Error::Argument(format!("direction buffer has {len} entries, expected {}", f.dim)).into());
        }
        *out(lambda, "lambda")? = f.fitted.bayes_plugin.lambda;
        slice_mut(u, len, "u")?.copy_from_slice(f.fitted.bayes_plugin.u.as_slice());
        Ok(())
    })
}

/// Posterior mean covariance `Σ̄`, row-major; `len` must be `l²`.
///
/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_extended_covariance(
    fit: *const BxSpikedFit,
    sigma: *mut f64,
    len: usize,
) -> BxStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if len != f.dim * f.dim {
            return Err(Error::Argument(format!("covariance buffer has {len} entries, expected l²")).into());
        }
        let dst = slice_mut(sigma, len, "sigma")?;
        let s = &f.fitted.extended_plugin.sigma;
        for i in 0..f.dim {
            for j in 0..f.dim {
                dst[i * f.dim + j] = s[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// See the crate-level contract.
#[no_mangle]
pub unsafe extern "C" fn bx_spiked_log_density(
    fit: *const BxSpikedFit,
    kind: BxSpikedPredictive,
    y: *const f64,
    len: usize,
    value: *mut f64,
) -> BxStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if len != f.dim {
            return Err(Error::Argument(format!("point has {len} entries, expected {}", f.dim)).into());
        }
        let y = DVector::from_column_slice(slice(y, len, "y")?);
        let slot = out(value, "value")?;
        *slot = match kind {
            BxSpikedPredictive::BayesPlugin => f.fitted.bayes_plugin.log_density(&y),
            BxSpikedPredictive::ExtendedPlugin => f.fitted.extended_plugin.log_density(&y),
            BxSpikedPredictive::Mixture => f.fitted.mixture.log_density(&y),
        };
        Ok(())
    })
}
