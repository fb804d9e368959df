//! Zero-mean Gaussian spiked covariance model `N_l(0, λ u uᵀ + I)`.
//!
//! Σ(λ, u) has eigenvalues `λ + 1, 1, …, 1`, so every density evaluation goes
//! through the rank-one identities
//!
//! ```text
//! Σ⁻¹ = I − (λ/(1+λ)) u uᵀ,    log det Σ = log(1 + λ),
//! ```
//!
//! and the likelihood of `n` samples depends on the data only through the
//! scatter matrix `S = Σ_t x_t x_tᵀ`. The posterior over `(λ, u)` is explored
//! by a Metropolis-within-Gibbs chain; from its draws we build the plugin of
//! the Bayes estimator, the extended plugin `N(0, Σ̄)` and the Bayesian
//! predictive mixture.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expfam::{vech_len, CurvedModel, DataSummary, ZeroMeanGaussian};
use crate::sampling::RngStream;

/// Spike strength and direction.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikedParam {
    pub lambda: f64,
    pub u: DVector<f64>,
}

const UNIT_TOL: f64 = 1e-12;

impl SpikedParam {
    /// Requires `λ > 0` and `‖u‖ = 1` to 1e-12.
    pub fn new(lambda: f64, u: DVector<f64>) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Domain(format!("spike strength must be positive, got {lambda}")));
        }
        if (u.norm() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain("spike direction must have unit norm".into()));
        }
        Ok(Self { lambda, u })
    }

    /// Normalises `direction` first.
    pub fn from_direction(lambda: f64, direction: DVector<f64>) -> Result<Self> {
        let norm = direction.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Domain("spike direction must be non-zero".into()));
        }
        Self::new(lambda, direction / norm)
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// `λ/(1+λ)`, the weight of `u uᵀ` in Σ⁻¹.
    pub fn shrink(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }

    /// `−½ log det Σ = −½ log(1+λ)`.
    fn neg_half_logdet(&self) -> f64 {
        -0.5 * self.lambda.ln_1p()
    }

    /// `log N(y; 0, Σ(λ, u))` in O(l).
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let proj = self.u.dot(y);
        let quad = y.norm_squared() - self.shrink() * proj * proj;
        -0.5 * self.dim() as f64 * TAU.ln() + self.neg_half_logdet() - 0.5 * quad
    }

    /// Exact draw `z + √λ ε u` with `z ~ N(0, I)`, `ε ~ N(0, 1)`.
    pub fn sample(&self, stream: &mut RngStream) -> DVector<f64> {
        let z = stream.normal_vec(self.dim());
        let e = stream.normal();
        z + &self.u * (self.lambda.sqrt() * e)
    }
}

/// `λ u uᵀ + I`.
pub fn covariance(p: &SpikedParam) -> DMatrix<f64> {
    let l = p.dim();
    DMatrix::identity(l, l) + &p.u * p.u.transpose() * p.lambda
}

/// Proper prior on λ; `u` is always uniform on the sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum LambdaPrior {
    HalfCauchy { scale: f64 },
    Exponential { rate: f64 },
}

impl LambdaPrior {
    pub fn log_density(&self, lambda: f64) -> f64 {
        if !(lambda > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            Self::HalfCauchy { scale } => (2.0 / (PI * scale)).ln() - (lambda / scale).powi(2).ln_1p(),
            Self::Exponential { rate } => rate.ln() - rate * lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::HalfCauchy { scale } => scale > 0.0 && scale.is_finite(),
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("improper λ prior {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikedPrior {
    pub lambda_prior: LambdaPrior,
}

impl Default for SpikedPrior {
    fn default() -> Self {
        Self {
            lambda_prior: LambdaPrior::HalfCauchy { scale: 1.0 },
        }
    }
}

impl SpikedPrior {
    /// Log prior density; the uniform density of `u` is a constant and omitted.
    pub fn log_density(&self, p: &SpikedParam) -> f64 {
        self.lambda_prior.log_density(p.lambda)
    }
}

/// Sample count and scatter matrix `S = Σ_t x_t x_tᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikedData {
    pub n: usize,
    pub scatter: DMatrix<f64>,
    trace: f64,
}

impl SpikedData {
    pub fn from_scatter(n: usize, scatter: DMatrix<f64>) -> Result<Self> {
        if n == 0 || !scatter.is_square() || scatter.nrows() == 0 {
            return Err(Error::Argument("need n ≥ 1 and a square scatter matrix".into()));
        }
        if scatter.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite scatter matrix".into()));
        }
        let trace = scatter.trace();
        Ok(Self { n, scatter, trace })
    }

    pub fn from_samples(xs: &[DVector<f64>]) -> Result<Self> {
        let first = xs.first().ok_or_else(|| Error::Argument("no samples".into()))?;
        let l = first.len();
        let mut s = DMatrix::zeros(l, l);
        for x in xs {
            if x.len() != l {
                return Err(Error::Argument("samples of unequal length".into()));
            }
            s.ger(1.0, x, x, 1.0);
        }
        Self::from_scatter(xs.len(), s)
    }

    /// Rows of `xs` are samples.
    pub fn from_rows(xs: &DMatrix<f64>) -> Result<Self> {
        Self::from_scatter(xs.nrows(), xs.transpose() * xs)
    }

    pub fn generate(truth: &SpikedParam, n: usize, stream: &mut RngStream) -> Result<Self> {
        let xs: Vec<_> = (0..n).map(|_| truth.sample(stream)).collect();
        Self::from_samples(&xs)
    }

    pub fn dim(&self) -> usize {
        self.scatter.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    fn quad(&self, u: &DVector<f64>) -> f64 {
        u.dot(&(&self.scatter * u))
    }

    /// Sufficient statistic of the enveloping zero-mean family.
    pub fn summary(&self) -> Result<DataSummary> {
        DataSummary::new(self.n, crate::expfam::vech(&self.scatter))
    }
}

/// `Σ_t log N(x_t; 0, Σ)` from the trace of S and `uᵀ S u`.
fn log_likelihood_parts(n: usize, l: usize, trace: f64, quad: f64, lambda: f64) -> f64 {
    let nf = n as f64;
    -0.5 * nf * l as f64 * TAU.ln() - 0.5 * nf * lambda.ln_1p() - 0.5 * (trace - lambda / (1.0 + lambda) * quad)
}

pub fn log_likelihood(data: &SpikedData, p: &SpikedParam) -> Result<f64> {
    check(data, p)?;
    Ok(log_likelihood_parts(
        data.n,
        data.dim(),
        data.trace,
        data.quad(&p.u),
        p.lambda,
    ))
}

fn check(data: &SpikedData, p: &SpikedParam) -> Result<()> {
    if !(p.lambda > 0.0) {
        return Err(Error::Domain(format!("λ must be positive, got {}", p.lambda)));
    }
    if p.dim() != data.dim() {
        return Err(Error::Domain("parameter and data dimensions differ".into()));
    }
    Ok(())
}

/// Unnormalised log posterior.
pub fn log_posterior(prior: &SpikedPrior, data: &SpikedData, p: &SpikedParam) -> Result<f64> {
    Ok(log_likelihood(data, p)? + prior.log_density(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_draws: usize,
    pub burn_in: usize,
    /// Standard deviation of the Gaussian step on log λ.
    pub log_lambda_step: f64,
    /// Scale `s` of the direction proposal; `None` means `0.3/√l`.
    pub direction_step: Option<f64>,
    /// Tune both proposal scales during burn-in; kept draws always use fixed scales.
    pub adapt: bool,
    pub seed: u64,
    pub stream_id: u64,
}

impl McmcConfig {
    /// 1000/250 draws for `l < 80`, 2000/500 from `l = 80` on.
    pub fn for_dimension(l: usize, seed: u64) -> Self {
        let (n_draws, burn_in) = if l >= 80 { (2000, 500) } else { (1000, 250) };
        Self {
            n_draws,
            burn_in,
            log_lambda_step: 0.15,
            direction_step: None,
            adapt: true,
            seed,
            stream_id: 0,
        }
    }

    pub fn direction_scale(&self, l: usize) -> f64 {
        self.direction_step.unwrap_or(0.3 / (l as f64).sqrt())
    }

    fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(Error::Argument("MCMC needs at least one draw".into()));
        }
        if !(self.log_lambda_step > 0.0) || self.direction_step.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Argument("proposal scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub draws: Vec<SpikedParam>,
    pub burn_in: usize,
    /// Post-burn-in acceptance rates of the λ block and the direction block.
    pub acceptance_rates: [f64; 2],
    /// Proposal scales used after burn-in (log λ step, direction `s`).
    pub proposal_scales: [f64; 2],
    pub seed: u64,
    pub stream_id: u64,
    pub warnings: Vec<String>,
}

pub const ACCEPTANCE_BAND: (f64, f64) = (0.05, 0.8);

const ADAPT_BATCH: usize = 25;
const ADAPT_TARGET: f64 = 0.3;
const ADAPT_GAIN: f64 = 3.0;

/// Metropolis-within-Gibbs on `(λ, u)`.
///
/// Block 1 is a Gaussian random walk on log λ (the log-Jacobian enters the
/// ratio). Block 2 proposes `u' = normalize(u + s z)` with `z` standard normal
/// in the orthogonal complement of `u`; the proposal density depends only on
/// the angle between `u` and `u'`, so it is symmetric. The chain starts from
/// the top eigenpair of `S/n`.
///
/// With `adapt` set, each scale is multiplied by `exp(3 (a − 0.3))` after every
/// batch of 25 burn-in iterations, `a` being the batch acceptance rate.
pub fn sample_posterior(prior: &SpikedPrior, data: &SpikedData, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    prior.lambda_prior.validate()?;
    if data.n < 2 {
        return Err(Error::Argument("the sampler needs n ≥ 2".into()));
    }
    let l = data.dim();
    let (n, trace) = (data.n, data.trace);
    let mut stream = RngStream::new(config.seed, config.stream_id);

    let (top, top_val, _) = power_iteration(&(&data.scatter / n as f64), &DVector::from_fn(l, |i, _| start_entry(i)));
    let mut lambda = (top_val - 1.0).max(0.1);
    let mut u = top;
    let mut quad = data.quad(&u);
    let target = |lambda: f64, quad: f64| {
        log_likelihood_parts(n, l, trace, quad, lambda) + prior.lambda_prior.log_density(lambda)
    };
    let mut current = target(lambda, quad);
    let mut scales = [config.log_lambda_step, config.direction_scale(l)];

    let total = config.burn_in + config.n_draws;
    let mut draws = Vec::with_capacity(config.n_draws);
    let mut accepted = [0usize; 2];
    let mut batch = [0usize; 2];
    for it in 0..total {
        if config.adapt && it < config.burn_in && it > 0 && it % ADAPT_BATCH == 0 {
            for (scale, hits) in scales.iter_mut().zip(&mut batch) {
                *scale *= (ADAPT_GAIN * (*hits as f64 / ADAPT_BATCH as f64 - ADAPT_TARGET)).exp();
                *hits = 0;
            }
        }
        let prop_lambda = lambda * (scales[0] * stream.normal()).exp();
        let prop = target(prop_lambda, quad);
        let log_ratio = prop - current + (prop_lambda / lambda).ln();
        let keep = it >= config.burn_in;
        if stream.uniform().ln() < log_ratio {
            lambda = prop_lambda;
            current = prop;
            batch[0] += 1;
            if keep {
                accepted[0] += 1;
            }
        }

        let mut z = stream.normal_vec(l);
        let along = z.dot(&u);
        z.axpy(-along, &u, 1.0);
        let mut cand = &u + z * scales[1];
        let norm = cand.norm();
        cand /= norm;
        let cand_quad = data.quad(&cand);
        let prop = target(lambda, cand_quad);
        if stream.uniform().ln() < prop - current {
            u = cand;
            quad = cand_quad;
            current = prop;
            batch[1] += 1;
            if keep {
                accepted[1] += 1;
            }
        }

        if keep {
            draws.push(SpikedParam { lambda, u: u.clone() });
        }
    }

    let rates = [
        accepted[0] as f64 / config.n_draws as f64,
        accepted[1] as f64 / config.n_draws as f64,
    ];
    let mut warnings = Vec::new();
    for (name, rate) in ["λ", "direction"].iter().zip(rates) {
        if rate < ACCEPTANCE_BAND.0 || rate > ACCEPTANCE_BAND.1 {
            warnings.push(format!("{name} block acceptance rate {rate:.3} outside [0.05, 0.8]"));
        }
    }
    Ok(PosteriorDraws {
        draws,
        burn_in: config.burn_in,
        acceptance_rates: rates,
        proposal_scales: scales,
        seed: config.seed,
        stream_id: config.stream_id,
        warnings,
    })
}

fn start_entry(i: usize) -> f64 {
    1.0 / (1.0 + i as f64)
}

/// `Σ̄`, the posterior mean of Σ over the draws.
pub fn posterior_mean_sigma(draws: &[SpikedParam]) -> Result<DMatrix<f64>> {
    let first = draws
        .first()
        .ok_or_else(|| Error::Argument("no posterior draws".into()))?;
    let l = first.dim();
    let mut acc = DMatrix::zeros(l, l);
    for p in draws {
        acc.ger(p.lambda, &p.u, &p.u, 1.0);
    }
    acc /= draws.len() as f64;
    // rank-one updates round the two triangles differently
    acc = (&acc + acc.transpose()) * 0.5;
    for i in 0..l {
        acc[(i, i)] += 1.0;
    }
    Ok(acc)
}

pub const POWER_TOL: f64 = 1e-12;
pub const POWER_MAX_ITER: usize = 10_000;
pub const DEGENERACY_GAP: f64 = 1e-10;

/// Power iteration from `start`; returns the unit iterate, its Rayleigh
/// quotient and whether the step size fell below [`POWER_TOL`].
fn power_iteration(m: &DMatrix<f64>, start: &DVector<f64>) -> (DVector<f64>, f64, bool) {
    let mut v = start.normalize();
    for _ in 0..POWER_MAX_ITER {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return (v, 0.0, true);
        }
        let next = w / norm;
        let step = (&next - &v).norm();
        v = next;
        if step <= POWER_TOL {
            let value = v.dot(&(m * &v));
            return (v, value, true);
        }
    }
    let value = v.dot(&(m * &v));
    (v, value, false)
}

/// Flips `v` so that its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let idx = v.iamax();
    if v[idx] < 0.0 {
        v.neg_mut();
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopEigen {
    pub vector: DVector<f64>,
    pub value: f64,
    /// Estimated distance to the second eigenvalue.
    pub gap: f64,
    pub warning: Option<String>,
}

/// Leading eigenpair of a symmetric positive semi-definite matrix.
///
/// Starts from `e₁`. A converged iterate whose Rayleigh quotient is below the
/// largest diagonal entry cannot be the top eigenvector (the start was
/// orthogonal to it), so the iteration restarts from the coordinate vector of
/// that entry and then from a dense vector. The gap comes from a second power
/// iteration on the deflated matrix.
pub fn top_eigenvector(m: &DMatrix<f64>) -> TopEigen {
    let l = m.nrows();
    let diag_max = m.diagonal().max();
    let tol = 1e-10 * diag_max.abs().max(1.0);
    let e1 = DVector::from_fn(l, |i, _| if i == 0 { 1.0 } else { 0.0 });
    let mut best = power_iteration(m, &e1);
    if best.1 < diag_max - tol {
        let k = m.diagonal().imax();
        let ek = DVector::from_fn(l, |i, _| if i == k { 1.0 } else { 0.0 });
        for start in [ek, DVector::from_fn(l, |i, _| start_entry(i))] {
            let cand = power_iteration(m, &start);
            if cand.1 > best.1 {
                best = cand;
            }
            if best.1 >= diag_max - tol {
                break;
            }
        }
    }
    let (mut vector, value, converged) = best;
    normalize_sign(&mut vector);

    let gap = if l == 1 {
        f64::INFINITY
    } else {
        let deflated = m - &vector * vector.transpose() * value;
        let k = deflated.diagonal().imax();
        let mut start = DVector::from_fn(l, |i, _| start_entry(i) * 1e-3);
        start[k] += 1.0;
        let (_, second, _) = power_iteration(&deflated, &start);
        value - second
    };
    let warning = if gap < DEGENERACY_GAP {
        Some(format!("top eigenvalue nearly degenerate (gap {gap:e})"))
    } else if !converged {
        Some(format!(
            "power iteration did not converge in {POWER_MAX_ITER} iterations"
        ))
    } else {
        None
    };
    TopEigen {
        vector,
        value,
        gap,
        warning,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BayesEstimate {
    pub param: SpikedParam,
    pub warning: Option<String>,
}

/// Posterior mean of λ with the leading eigenvector of [`posterior_mean_sigma`].
pub fn bayes_estimator(draws: &[SpikedParam]) -> Result<BayesEstimate> {
    let sigma_bar = posterior_mean_sigma(draws)?;
    let lambda = draws.iter().map(|p| p.lambda).sum::<f64>() / draws.len() as f64;
    let top = top_eigenvector(&sigma_bar);
    Ok(BayesEstimate {
        param: SpikedParam::from_direction(lambda, top.vector)?,
        warning: top.warning,
    })
}

/// `½(tr(Σ₁⁻¹Σ₀) − l + log det Σ₁ − log det Σ₀)`.
pub fn gaussian_kl_zero_mean(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<f64> {
    if sigma0.shape() != sigma1.shape() || !sigma0.is_square() {
        return Err(Error::Domain("covariances must be square and of equal size".into()));
    }
    let c0 = sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("Σ₀ is not positive definite".into()))?;
    let c1 = sigma1
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("Σ₁ is not positive definite".into()))?;
    let logdet =
        |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| 2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let tr = c1.solve(sigma0).trace();
    let kl = 0.5 * (tr - sigma0.nrows() as f64 + logdet(&c1) - logdet(&c0));
    Ok(kl.max(0.0))
}

/// Divergence between two spiked Gaussians in O(l):
/// `tr(Σ₁⁻¹Σ₀) = l + λ₀ − c₁(1 + λ₀ (u₀·u₁)²)` with `c₁ = λ₁/(1+λ₁)`.
pub fn spiked_kl(p0: &SpikedParam, p1: &SpikedParam) -> f64 {
    let c = p0.u.dot(&p1.u);
    let tr_excess = p0.lambda - p1.shrink() * (1.0 + p0.lambda * c * c);
    (0.5 * (tr_excess + p1.lambda.ln_1p() - p0.lambda.ln_1p())).max(0.0)
}

/// A fitted Gaussian `N(0, Σ)` with cached Cholesky factor.
#[derive(Clone, Debug)]
pub struct DenseGaussian {
    pub sigma: DMatrix<f64>,
    /// Rows of the lower triangle of `L⁻¹` (`Σ = L Lᵀ`), each zero-padded to
    /// a multiple of [`LANES`] and stored back to back.
    l_inv: Vec<f64>,
    log_norm: f64,
}

impl DenseGaussian {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Domain("covariance is not positive definite".into()))?;
        let l = sigma.nrows();
        let half_logdet: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(l, l))
            .ok_or_else(|| Error::Domain("singular Cholesky factor".into()))?;
        let mut packed = Vec::new();
        for i in 0..l {
            packed.extend((0..padded_len(i + 1)).map(|j| if j <= i { l_inv[(i, j)] } else { 0.0 }));
        }
        Ok(Self {
            sigma,
            l_inv: packed,
            log_norm: -0.5 * l as f64 * TAU.ln() - half_logdet,
        })
    }

    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let l = y.len();
        let mut yp = vec![0.0; padded_len(l)];
        yp[..l].copy_from_slice(y.as_slice());
        let mut sq = 0.0;
        let mut start = 0;
        for i in 0..l {
            let len = padded_len(i + 1);
            let z = dot(&self.l_inv[start..start + len], &yp[..len]);
            sq += z * z;
            start += len;
        }
        self.log_norm - 0.5 * sq
    }

    /// Number of stored parameters (the covariance matrix).
    pub fn stored_bytes(&self) -> usize {
        self.sigma.len() * std::mem::size_of::<f64>()
    }
}

const LANES: usize = 8;

fn padded_len(len: usize) -> usize {
    len.div_ceil(LANES) * LANES
}

/// Dot product of equal-length slices, one accumulator per lane.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let (ca, ra) = a.split_at(a.len() / LANES * LANES);
    let (cb, rb) = b.split_at(ca.len());
    for (x, y) in ca.chunks_exact(LANES).zip(cb.chunks_exact(LANES)) {
        for k in 0..LANES {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Posterior-averaged density `(1/D) Σ_d N(y; 0, Σ(λ_d, u_d))`.
#[derive(Clone, Debug)]
pub struct MixturePredictive {
    /// Draw directions as columns.
    directions: DMatrix<f64>,
    shrink: Vec<f64>,
    neg_half_logdet: Vec<f64>,
}

impl MixturePredictive {
    pub fn new(draws: &[SpikedParam]) -> Result<Self> {
        let first = draws
            .first()
            .ok_or_else(|| Error::Argument("no posterior draws".into()))?;
        let l = first.dim();
        let mut directions = DMatrix::zeros(l, draws.len());
        for (d, p) in draws.iter().enumerate() {
            directions.set_column(d, &p.u);
        }
        Ok(Self {
            directions,
            shrink: draws.iter().map(SpikedParam::shrink).collect(),
            neg_half_logdet: draws.iter().map(SpikedParam::neg_half_logdet).collect(),
        })
    }

    pub fn components(&self) -> usize {
        self.shrink.len()
    }

    fn log_mean_exp_with(&self, sq: f64, proj: impl Iterator<Item = f64>, scratch: &mut Vec<f64>) -> f64 {
        let l = self.directions.nrows() as f64;
        scratch.clear();
        scratch.extend(
            proj.zip(&self.shrink)
                .zip(&self.neg_half_logdet)
                .map(|((p, c), h)| h + 0.5 * c * p * p),
        );
        let max = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scratch.iter().map(|v| (v - max).exp()).sum();
        -0.5 * l * TAU.ln() - 0.5 * sq + max + (sum / scratch.len() as f64).ln()
    }

    /// Log-mean-exp of the component log densities, max-stabilised.
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        let proj = self.directions.tr_mul(y);
        self.log_mean_exp_with(
            y.norm_squared(),
            proj.iter().cloned(),
            &mut Vec::with_capacity(self.components()),
        )
    }

    /// Log densities at the columns of `ys`.
    pub fn log_density_batch(&self, ys: &DMatrix<f64>) -> Vec<f64> {
        let proj = self.directions.tr_mul(ys);
        let mut scratch = Vec::with_capacity(self.components());
        (0..ys.ncols())
            .map(|j| {
                self.log_mean_exp_with(
                    ys.column(j).norm_squared(),
                    proj.column(j).iter().cloned(),
                    &mut scratch,
                )
            })
            .collect()
    }

    /// Every draw's λ and direction.
    pub fn stored_bytes(&self) -> usize {
        (self.directions.len() + self.shrink.len()) * std::mem::size_of::<f64>()
    }
}

pub fn mixture_log_density(draws: &[SpikedParam], y: &DVector<f64>) -> Result<f64> {
    Ok(MixturePredictive::new(draws)?.log_density(y))
}

/// The three predictive densities compared in the experiments.
#[derive(Clone, Debug)]
pub enum SpikedPredictive {
    /// `N(0, Σ(λ̂_π, û_π))`.
    BayesPlugin(SpikedParam),
    /// `N(0, Σ̄)`.
    ExtendedPlugin(DenseGaussian),
    Mixture(MixturePredictive),
}

impl SpikedPredictive {
    pub fn log_density(&self, y: &DVector<f64>) -> f64 {
        match self {
            Self::BayesPlugin(p) => p.log_density(y),
            Self::ExtendedPlugin(g) => g.log_density(y),
            Self::Mixture(m) => m.log_density(y),
        }
    }
}

/// The three predictives built from one posterior sample.
#[derive(Clone, Debug)]
pub struct FittedPredictives {
    pub bayes_plugin: SpikedParam,
    pub extended_plugin: DenseGaussian,
    pub mixture: MixturePredictive,
    pub warnings: Vec<String>,
}

impl FittedPredictives {
    pub fn from_draws(posterior: &PosteriorDraws) -> Result<Self> {
        let est = bayes_estimator(&posterior.draws)?;
        let mut warnings = posterior.warnings.clone();
        warnings.extend(est.warning);
        Ok(Self {
            bayes_plugin: est.param,
            extended_plugin: DenseGaussian::new(posterior_mean_sigma(&posterior.draws)?)?,
            mixture: MixturePredictive::new(&posterior.draws)?,
            warnings,
        })
    }
}

/// Columns are iid draws from `N(0, Σ(truth))`.
pub fn sample_y(truth: &SpikedParam, count: usize, stream: &mut RngStream) -> DMatrix<f64> {
    let l = truth.dim();
    let mut ys = DMatrix::zeros(l, count);
    for j in 0..count {
        ys.set_column(j, &truth.sample(stream));
    }
    ys
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `D(p_true ‖ p̂)`: exact for the Gaussian predictives, Monte Carlo mean of
/// `log p_true(y) − log p̂(y)` over the columns of `y_samples` for the mixture.
pub fn kl_risk_terms(truth: &SpikedParam, predictive: &SpikedPredictive, y_samples: &DMatrix<f64>) -> Result<f64> {
    match predictive {
        SpikedPredictive::BayesPlugin(p) => Ok(spiked_kl(truth, p)),
        SpikedPredictive::ExtendedPlugin(g) => gaussian_kl_zero_mean(&covariance(truth), &g.sigma),
        SpikedPredictive::Mixture(m) => Ok(mixture_kl_mc(truth, m, y_samples)?.0),
    }
}

/// Plain Monte Carlo estimate of the mixture divergence with its standard error.
pub fn mixture_kl_mc(truth: &SpikedParam, mix: &MixturePredictive, y_samples: &DMatrix<f64>) -> Result<(f64, f64)> {
    if y_samples.ncols() == 0 {
        return Err(Error::Argument("no y samples".into()));
    }
    let lm = mix.log_density_batch(y_samples);
    let terms: Vec<f64> = y_samples
        .column_iter()
        .zip(&lm)
        .map(|(y, m)| truth.log_density(&y.into_owned()) - m)
        .collect();
    Ok(mean_stderr(&terms))
}

/// Mixture divergence with the extended plugin as control variate:
/// `D(p‖N(0,Σ̄)) + E[log N(y; 0, Σ̄) − log p_mix(y)]`. Unbiased like
/// [`mixture_kl_mc`], with the variance of `log p_true(y)` cancelled.
pub fn mixture_kl_controlled(
    truth: &SpikedParam,
    fitted: &FittedPredictives,
    y_samples: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    if y_samples.ncols() == 0 {
        return Err(Error::Argument("no y samples".into()));
    }
    let exact = gaussian_kl_zero_mean(&covariance(truth), &fitted.extended_plugin.sigma)?;
    let lm = fitted.mixture.log_density_batch(y_samples);
    let terms: Vec<f64> = y_samples
        .column_iter()
        .zip(&lm)
        .map(|(y, m)| fitted.extended_plugin.log_density(&y.into_owned()) - m)
        .collect();
    let (mean, se) = mean_stderr(&terms);
    Ok((exact + mean, se))
}

/// Spiked model as a curved submodel of the zero-mean family, in the chart
/// `ω = (λ, w)`, `u = normalize(anchor + B w)` where the columns of `B` span
/// the orthogonal complement of the unit vector `anchor`.
#[derive(Clone, Debug)]
pub struct SpikedChart {
    pub anchor: DVector<f64>,
    basis: DMatrix<f64>,
    family: ZeroMeanGaussian,
}

impl SpikedChart {
    pub fn new(anchor: DVector<f64>) -> Result<Self> {
        let l = anchor.len();
        let norm = anchor.norm();
        if l < 2 || !(norm > 0.0) {
            return Err(Error::Argument(
                "chart anchor must be a non-zero vector with l ≥ 2".into(),
            ));
        }
        let anchor = anchor / norm;
        // Gram–Schmidt on the coordinate vectors, skipping the one most aligned with the anchor.
        let skip = anchor.iamax();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(l - 1);
        for k in (0..l).filter(|&k| k != skip) {
            let mut v = DVector::from_fn(l, |i, _| if i == k { 1.0 } else { 0.0 });
            v.axpy(-anchor.dot(&v), &anchor, 1.0);
            for c in &cols {
                let proj = c.dot(&v);
                v.axpy(-proj, c, 1.0);
            }
            cols.push(v.normalize());
        }
        Ok(Self {
            basis: DMatrix::from_columns(&cols),
            anchor,
            family: ZeroMeanGaussian::new(l),
        })
    }

    pub fn family(&self) -> &ZeroMeanGaussian {
        &self.family
    }

    pub fn param(&self, omega: &DVector<f64>) -> Result<SpikedParam> {
        let w = omega.rows(1, omega.len() - 1);
        SpikedParam::from_direction(omega[0], &self.anchor + &self.basis * w)
    }

    /// Chart coordinates of `p`; `u` must not be orthogonal to the anchor.
    pub fn coordinates(&self, p: &SpikedParam) -> Result<DVector<f64>> {
        let a = self.anchor.dot(&p.u);
        if a.abs() < 1e-8 {
            return Err(Error::Domain("direction is outside the chart".into()));
        }
        let w = self.basis.tr_mul(&p.u) / a;
        let mut om = DVector::zeros(p.dim());
        om[0] = p.lambda;
        om.rows_mut(1, p.dim() - 1).copy_from(&w);
        Ok(om)
    }
}

impl CurvedModel for SpikedChart {
    fn dim(&self) -> usize {
        self.anchor.len()
    }

    /// θ of `Σ(λ, u)` from `Σ⁻¹ = I − c u uᵀ`: `θ_ii = −½(1 − c u_i²)`,
    /// `θ_ij = c u_i u_j`.
    fn embed(&self, omega: &DVector<f64>) -> DVector<f64> {
        let l = self.anchor.len();
        let raw = &self.anchor + &self.basis * omega.rows(1, l - 1);
        let u = raw.normalize();
        let c = omega[0] / (1.0 + omega[0]);
        let mut theta = DVector::zeros(vech_len(l));
        let mut k = 0;
        for i in 0..l {
            for j in i..l {
                theta[k] = if i == j {
                    -0.5 * (1.0 - c * u[i] * u[i])
                } else {
                    c * u[i] * u[j]
                };
                k += 1;
            }
        }
        theta
    }

    fn in_domain(&self, omega: &DVector<f64>) -> bool {
        omega.len() == self.anchor.len() && omega[0] > 0.0 && omega.iter().all(|v| v.is_finite())
    }

    /// Top eigenpair of `S/n`, with the direction expressed in this chart.
    fn initial_point(&self, data: &DataSummary) -> Result<DVector<f64>> {
        let l = self.anchor.len();
        let s = crate::expfam::unvech(&data.mean_t(), l);
        let top = top_eigenvector(&s);
        let lambda = (top.value - 1.0).max(1e-3);
        let mut u = top.vector;
        if u.dot(&self.anchor) < 0.0 {
            u.neg_mut();
        }
        self.coordinates(&SpikedParam::from_direction(lambda, u)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{mle, ExponentialFamily};
    use crate::geometry::geometry_at;
    use approx::assert_relative_eq;

    fn e(l: usize, k: usize) -> DVector<f64> {
        DVector::from_fn(l, |i, _| if i == k { 1.0 } else { 0.0 })
    }

    fn random_param(l: usize, stream: &mut RngStream) -> SpikedParam {
        let lambda = 0.2 + 5.0 * stream.uniform();
        SpikedParam::new(lambda, stream.uniform_sphere(l)).unwrap()
    }

    /// Cyclic Jacobi eigenvalue algorithm; returns eigenvalues and eigenvectors (columns).
    fn jacobi_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let n = a.nrows();
        let mut a = a.clone();
        let mut v = DMatrix::<f64>::identity(n, n);
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|(i, j)| i != j)
                .map(|(i, j)| a[(i, j)].powi(2))
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        ((0..n).map(|i| a[(i, i)]).collect(), v)
    }

    fn dense_log_density(sigma: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
        let ch = sigma.clone().cholesky().unwrap();
        let z = ch.l().solve_lower_triangular(y).unwrap();
        let half_logdet: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum();
        -0.5 * y.len() as f64 * TAU.ln() - half_logdet - 0.5 * z.norm_squared()
    }

    #[test]
    fn param_invariants() {
        assert!(SpikedParam::new(0.0, e(3, 0)).is_err());
        assert!(SpikedParam::new(1.0, DVector::from_vec(vec![1.0, 1e-5])).is_err());
        let p = SpikedParam::from_direction(2.0, DVector::from_vec(vec![3.0, 4.0])).unwrap();
        assert!((p.u.norm() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn covariance_examples() {
        let p = SpikedParam::new(3.0, e(2, 0)).unwrap();
        assert_eq!(covariance(&p), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]));
        let tiny = SpikedParam::new(1e-300, e(3, 1)).unwrap();
        assert_relative_eq!(covariance(&tiny), DMatrix::identity(3, 3), epsilon = 1e-15);
        let mut s = RngStream::new(4, 0);
        let p = SpikedParam::new(1.0, s.uniform_sphere(5)).unwrap();
        assert_relative_eq!(covariance(&p).determinant(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_eigenstructure() {
        let mut s = RngStream::new(5, 0);
        for l in [2, 5, 9] {
            let p = random_param(l, &mut s);
            let top = top_eigenvector(&covariance(&p));
            assert!((top.vector.dot(&p.u).abs() - 1.0).abs() <= 1e-10);
            assert_relative_eq!(top.value, p.lambda + 1.0, epsilon = 1e-10);
            let (vals, _) = jacobi_eigen(&covariance(&p));
            let mut vals = vals;
            vals.sort_by(f64::total_cmp);
            for v in &vals[..l - 1] {
                assert_relative_eq!(*v, 1.0, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn woodbury_matches_dense() {
        let mut s = RngStream::new(6, 0);
        for l in 1..=10 {
            let p = random_param(l, &mut s);
            let sigma = covariance(&p);
            for _ in 0..5 {
                let y = s.normal_vec(l) * 2.0;
                assert!((p.log_density(&y) - dense_log_density(&sigma, &y)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn log_posterior_matches_dense_and_is_antipodal() {
        let mut s = RngStream::new(7, 0);
        let prior = SpikedPrior::default();
        for _ in 0..10 {
            let truth = random_param(5, &mut s);
            let xs: Vec<_> = (0..12).map(|_| truth.sample(&mut s)).collect();
            let data = SpikedData::from_samples(&xs).unwrap();
            let p = random_param(5, &mut s);
            let dense: f64 = xs.iter().map(|x| dense_log_density(&covariance(&p), x)).sum::<f64>()
                + prior.lambda_prior.log_density(p.lambda);
            let lp = log_posterior(&prior, &data, &p).unwrap();
            assert!((lp - dense).abs() <= 1e-8, "{lp} vs {dense}");
            let flipped = SpikedParam::new(p.lambda, -&p.u).unwrap();
            assert_eq!(lp, log_posterior(&prior, &data, &flipped).unwrap());
        }
        let data = SpikedData::from_samples(&[e(5, 0)]).unwrap();
        let bad = SpikedParam {
            lambda: -1.0,
            u: e(5, 0),
        };
        assert!(matches!(log_posterior(&prior, &data, &bad), Err(Error::Domain(_))));
    }

    #[test]
    fn log_posterior_increases_toward_true_spike() {
        let truth = SpikedParam::new(8.0, e(4, 0)).unwrap();
        let mut s = RngStream::new(8, 0);
        let data = SpikedData::generate(&truth, 500, &mut s).unwrap();
        let prior = SpikedPrior::default();
        let grid: Vec<f64> = (1..=16).map(|k| k as f64 * 0.5).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|&lam| log_posterior(&prior, &data, &SpikedParam::new(lam, e(4, 0)).unwrap()).unwrap())
            .collect();
        assert!(vals.windows(2).take(8).all(|w| w[1] > w[0]));
    }

    #[test]
    fn half_cauchy_normalises() {
        let prior = LambdaPrior::HalfCauchy { scale: 1.0 };
        // ∫₀^∞ via λ = tan(t)
        let k = 20_000;
        let h = (PI / 2.0) / k as f64;
        let total: f64 = (0..k)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                prior.log_density(t.tan()).exp() / t.cos().powi(2) * h
            })
            .sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-6);
        assert_eq!(prior.log_density(0.0), f64::NEG_INFINITY);
    }

    fn chain(truth: &SpikedParam, n: usize, seed: u64) -> PosteriorDraws {
        let mut s = RngStream::new(seed, 0);
        let data = SpikedData::generate(truth, n, &mut s).unwrap();
        let cfg = McmcConfig::for_dimension(truth.dim(), seed);
        sample_posterior(&SpikedPrior::default(), &data, &cfg).unwrap()
    }

    #[test]
    fn posterior_concentrates_at_large_n() {
        let truth = SpikedParam::new(2.0, e(5, 0)).unwrap();
        let post = chain(&truth, 10_000, 11);
        assert_eq!(post.draws.len(), 1000);
        let mean_lambda = post.draws.iter().map(|p| p.lambda).sum::<f64>() / 1000.0;
        assert!((mean_lambda - 2.0).abs() < 0.2, "{mean_lambda}");
        let mean_cos = post.draws.iter().map(|p| p.u[0].abs()).sum::<f64>() / 1000.0;
        assert!(mean_cos > 0.99, "{mean_cos}");
        assert!(post
            .draws
            .iter()
            .all(|p| p.lambda > 0.0 && (p.u.norm() - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn sampler_is_deterministic() {
        let truth = SpikedParam::new(1.0, e(5, 2)).unwrap();
        let a = chain(&truth, 20, 3);
        let b = chain(&truth, 20, 3);
        assert_eq!(a, b);
        let c = chain(&truth, 20, 4);
        assert_ne!(a.draws, c.draws);
        assert!(a.acceptance_rates.iter().all(|r| (0.0..=1.0).contains(r)));
    }

    #[test]
    fn sampler_validation() {
        let data = SpikedData::from_samples(&[e(3, 0)]).unwrap();
        let cfg = McmcConfig::for_dimension(3, 0);
        assert!(sample_posterior(&SpikedPrior::default(), &data, &cfg).is_err());
        let data = SpikedData::from_samples(&[e(3, 0), e(3, 1)]).unwrap();
        let cfg = McmcConfig { n_draws: 0, ..cfg };
        assert!(sample_posterior(&SpikedPrior::default(), &data, &cfg).is_err());
    }

    #[test]
    fn acceptance_outside_band_warns() {
        let truth = SpikedParam::new(1.0, e(3, 0)).unwrap();
        let mut s = RngStream::new(2, 0);
        let data = SpikedData::generate(&truth, 50, &mut s).unwrap();
        let cfg = McmcConfig {
            log_lambda_step: 1e-6,
            adapt: false,
            ..McmcConfig::for_dimension(3, 1)
        };
        let post = sample_posterior(&SpikedPrior::default(), &data, &cfg).unwrap();
        assert!(post.acceptance_rates[0] > 0.8);
        assert!(post.warnings.iter().any(|w| w.contains("λ block")));
    }

    #[test]
    fn burn_in_adaptation_reaches_band() {
        let truth = SpikedParam::new(1.0, e(40, 0)).unwrap();
        let mut s = RngStream::new(5, 0);
        let data = SpikedData::generate(&truth, 160, &mut s).unwrap();
        let fixed = McmcConfig {
            adapt: false,
            ..McmcConfig::for_dimension(40, 2)
        };
        let fixed = sample_posterior(&SpikedPrior::default(), &data, &fixed).unwrap();
        assert!(
            fixed.acceptance_rates[1] < ACCEPTANCE_BAND.0,
            "{:?}",
            fixed.acceptance_rates
        );
        assert_eq!(fixed.proposal_scales, [0.15, 0.3 / 40f64.sqrt()]);
        let tuned = sample_posterior(&SpikedPrior::default(), &data, &McmcConfig::for_dimension(40, 2)).unwrap();
        for r in tuned.acceptance_rates {
            assert!(r > 0.1 && r < 0.6, "{:?}", tuned.acceptance_rates);
        }
        assert!(tuned.warnings.is_empty());
    }

    #[test]
    fn posterior_mean_sigma_examples() {
        let p = SpikedParam::new(2.5, e(3, 1)).unwrap();
        assert_eq!(posterior_mean_sigma(std::slice::from_ref(&p)).unwrap(), covariance(&p));
        let q = SpikedParam::new(2.5, -e(3, 1)).unwrap();
        assert_relative_eq!(
            posterior_mean_sigma(&[p.clone(), q]).unwrap(),
            covariance(&p),
            epsilon = 1e-15
        );
        assert!(posterior_mean_sigma(&[]).is_err());
        let mut s = RngStream::new(9, 0);
        for _ in 0..20 {
            let draws: Vec<_> = (0..7).map(|_| random_param(4, &mut s)).collect();
            let m = posterior_mean_sigma(&draws).unwrap();
            assert_relative_eq!(m, m.transpose(), epsilon = 0.0);
            let (vals, _) = jacobi_eigen(&m);
            assert!(vals.iter().all(|&v| v >= 1.0 - 1e-10));
        }
    }

    #[test]
    fn bayes_estimator_examples() {
        let draws = vec![
            SpikedParam::new(1.0, e(4, 1)).unwrap(),
            SpikedParam::new(3.0, -e(4, 1)).unwrap(),
        ];
        let est = bayes_estimator(&draws).unwrap();
        assert_eq!(est.param.lambda, 2.0);
        assert_relative_eq!(est.param.u, e(4, 1), epsilon = 1e-12);
        assert!(est.warning.is_none());
    }

    #[test]
    fn bayes_estimator_matches_jacobi() {
        let mut s = RngStream::new(10, 0);
        for _ in 0..20 {
            let draws: Vec<_> = (0..6).map(|_| random_param(5, &mut s)).collect();
            let m = posterior_mean_sigma(&draws).unwrap();
            let (vals, vecs) = jacobi_eigen(&m);
            let k = (0..5).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
            let est = bayes_estimator(&draws).unwrap();
            let cos = est.param.u.dot(&vecs.column(k)).abs();
            assert!((cos - 1.0).abs() <= 1e-8, "{cos}");
            let idx = est.param.u.iamax();
            assert!(est.param.u[idx] > 0.0);
        }
    }

    #[test]
    fn degenerate_top_eigenvalue_warns() {
        let draws = vec![
            SpikedParam::new(2.0, e(3, 0)).unwrap(),
            SpikedParam::new(2.0, e(3, 1)).unwrap(),
        ];
        let est = bayes_estimator(&draws).unwrap();
        assert!(est.warning.unwrap().contains("degenerate"));
        assert_relative_eq!(est.param.u.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn antipodal_invariance() {
        let mut s = RngStream::new(12, 0);
        let draws: Vec<_> = (0..9).map(|_| random_param(4, &mut s)).collect();
        let flipped: Vec<_> = draws
            .iter()
            .map(|p| SpikedParam::new(p.lambda, -&p.u).unwrap())
            .collect();
        let a = posterior_mean_sigma(&draws).unwrap();
        let b = posterior_mean_sigma(&flipped).unwrap();
        assert!((a - b).amax() <= 1e-12);
        let ea = bayes_estimator(&draws).unwrap().param;
        let eb = bayes_estimator(&flipped).unwrap().param;
        assert!((ea.u - eb.u).amax() <= 1e-12);
        assert_eq!(ea.lambda, eb.lambda);
        for _ in 0..5 {
            let y = s.normal_vec(4);
            let la = mixture_log_density(&draws, &y).unwrap();
            let lb = mixture_log_density(&flipped, &y).unwrap();
            assert!((la - lb).abs() <= 1e-12);
        }
    }

    #[test]
    fn gaussian_kl_examples() {
        let s0 = DMatrix::identity(5, 5) * 2.0;
        let s1 = DMatrix::identity(5, 5);
        assert_eq!(gaussian_kl_zero_mean(&s1, &s1).unwrap(), 0.0);
        assert_relative_eq!(
            gaussian_kl_zero_mean(&s0, &s1).unwrap(),
            0.767_132_048_6,
            epsilon = 1e-9
        );
        assert!(gaussian_kl_zero_mean(&-s1.clone(), &s1).is_err());
        let mut s = RngStream::new(13, 0);
        for _ in 0..20 {
            let u = s.uniform_sphere(6);
            let a = SpikedParam::new(0.1 + 4.0 * s.uniform(), u.clone()).unwrap();
            let b = SpikedParam::new(0.1 + 4.0 * s.uniform(), u).unwrap();
            let dense = gaussian_kl_zero_mean(&covariance(&a), &covariance(&b)).unwrap();
            let rank_one = 0.5 * ((1.0 + a.lambda) / (1.0 + b.lambda) - 1.0 + b.lambda.ln_1p() - a.lambda.ln_1p());
            assert!((dense - rank_one).abs() <= 1e-10);
            let c = random_param(6, &mut s);
            let dense = gaussian_kl_zero_mean(&covariance(&a), &covariance(&c)).unwrap();
            assert!((dense - spiked_kl(&a, &c)).abs() <= 1e-10);
        }
    }

    #[test]
    fn mixture_examples() {
        let mut s = RngStream::new(14, 0);
        let p = random_param(3, &mut s);
        let y = s.normal_vec(3);
        assert_relative_eq!(
            mixture_log_density(std::slice::from_ref(&p), &y).unwrap(),
            p.log_density(&y),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            mixture_log_density(&[p.clone(), p.clone()], &y).unwrap(),
            p.log_density(&y),
            epsilon = 1e-14
        );
        let draws: Vec<_> = (0..10).map(|_| random_param(3, &mut s)).collect();
        for _ in 0..10 {
            let y = s.normal_vec(3) * 1.5;
            let naive = (draws.iter().map(|d| d.log_density(&y).exp()).sum::<f64>() / 10.0).ln();
            assert!((mixture_log_density(&draws, &y).unwrap() - naive).abs() <= 1e-12);
        }
        let mix = MixturePredictive::new(&draws).unwrap();
        let ys = DMatrix::from_fn(3, 4, |_, _| s.normal());
        let batch = mix.log_density_batch(&ys);
        for (j, v) in batch.iter().enumerate() {
            assert_eq!(*v, mix.log_density(&ys.column(j).into_owned()));
        }
    }

    #[test]
    fn risk_terms() {
        let mut s = RngStream::new(15, 0);
        let truth = random_param(4, &mut s);
        let ys = sample_y(&truth, 4000, &mut s);
        let same = SpikedPredictive::BayesPlugin(truth.clone());
        assert_eq!(kl_risk_terms(&truth, &same, &ys).unwrap(), 0.0);
        let dense = SpikedPredictive::ExtendedPlugin(DenseGaussian::new(covariance(&truth)).unwrap());
        assert!(kl_risk_terms(&truth, &dense, &ys).unwrap().abs() <= 1e-12);

        let other = random_param(4, &mut s);
        let exact = kl_risk_terms(&truth, &SpikedPredictive::BayesPlugin(other.clone()), &ys).unwrap();
        assert!(exact >= 0.0);
        let mix = MixturePredictive::new(std::slice::from_ref(&other)).unwrap();
        let (mc, se) = mixture_kl_mc(&truth, &mix, &ys).unwrap();
        assert!((mc - exact).abs() <= 3.0 * se, "{mc} ± {se} vs {exact}");
        assert_eq!(kl_risk_terms(&truth, &SpikedPredictive::Mixture(mix), &ys).unwrap(), mc);
    }

    #[test]
    fn control_variate_agrees_with_plain_estimate() {
        let truth = SpikedParam::new(1.0, e(5, 0)).unwrap();
        let post = chain(&truth, 20, 21);
        let fitted = FittedPredictives::from_draws(&post).unwrap();
        let mut s = RngStream::new(22, 0);
        let ys = sample_y(&truth, 20_000, &mut s);
        let (plain, se_plain) = mixture_kl_mc(&truth, &fitted.mixture, &ys).unwrap();
        let (cv, se_cv) = mixture_kl_controlled(&truth, &fitted, &ys).unwrap();
        assert!(se_cv < se_plain);
        assert!((plain - cv).abs() <= 3.0 * (se_plain + se_cv));
    }

    #[test]
    fn sampled_covariance_matches() {
        let truth = SpikedParam::new(3.0, DVector::from_vec(vec![0.6, 0.8])).unwrap();
        let mut s = RngStream::new(16, 0);
        let n = 200_000;
        let data = SpikedData::generate(&truth, n, &mut s).unwrap();
        let emp = &data.scatter / n as f64;
        let sigma = covariance(&truth);
        for i in 0..2 {
            for j in 0..2 {
                let var = sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2);
                assert!((emp[(i, j)] - sigma[(i, j)]).abs() <= 4.0 * (var / n as f64).sqrt());
            }
        }
    }

    #[test]
    fn chart_round_trip_and_embedding() {
        let mut s = RngStream::new(17, 0);
        let chart = SpikedChart::new(s.uniform_sphere(4)).unwrap();
        for _ in 0..10 {
            let mut p = random_param(4, &mut s);
            if p.u.dot(&chart.anchor) < 0.0 {
                p.u.neg_mut();
            }
            let om = chart.coordinates(&p).unwrap();
            let back = chart.param(&om).unwrap();
            assert_relative_eq!(back.u, p.u, epsilon = 1e-10);
            let theta = chart.embed(&om);
            let expected = chart.family().theta_from_covariance(&covariance(&p)).unwrap();
            assert_relative_eq!(theta, expected, epsilon = 1e-12);
            assert_relative_eq!(chart.basis.tr_mul(&chart.anchor).amax(), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn mle_is_consistent() {
        let truth = SpikedParam::new(4.0, e(3, 0)).unwrap();
        let mut s = RngStream::new(18, 0);
        let data = SpikedData::generate(&truth, 10_000, &mut s).unwrap();
        let chart = SpikedChart::new(DVector::from_vec(vec![1.0, 0.3, -0.2])).unwrap();
        let om = mle(chart.family(), &chart, &data.summary().unwrap()).unwrap();
        let p = chart.param(&om).unwrap();
        assert!((p.lambda - 4.0).abs() < 0.4, "{}", p.lambda);
        assert!(p.u[0].abs() > 0.99);
    }

    #[test]
    fn skewness_is_connection_difference() {
        let mut s = RngStream::new(19, 0);
        for _ in 0..20 {
            let chart = SpikedChart::new(s.uniform_sphere(3)).unwrap();
            let mut om = DVector::zeros(3);
            om[0] = 0.3 + 3.0 * s.uniform();
            om[1] = 0.5 * s.normal();
            om[2] = 0.5 * s.normal();
            let g = geometry_at(chart.family(), &chart, &om).unwrap();
            let diff = {
                let mut t = g.gamma_m.clone();
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..3 {
                            t[(a, b, c)] -= g.gamma_e[(a, b, c)];
                        }
                    }
                }
                t
            };
            assert!(diff.max_abs_diff(&g.skew) <= 1e-4 * g.skew.max_abs().max(1.0));
            assert!(chart.family().in_domain(&chart.embed(&om)));
        }
    }
}
