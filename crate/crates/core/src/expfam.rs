//! Full exponential families `p(x;θ) = s(x) exp(θ·t(x) − Ψ(θ))`, curved
//! submodels `ω ↦ θ(ω)`, and the conversions, densities and divergences
//! between them.

use nalgebra::{DMatrix, DVector};

use crate::diff;
use crate::error::{Error, Result};
use crate::sampling::RngStream;

/// Natural coordinates θ of a full exponential family.
#[derive(Clone, Debug, PartialEq)]
pub struct NaturalParam(pub DVector<f64>);

/// Expectation coordinates η = ∇Ψ(θ) = E[t(x)].
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationParam(pub DVector<f64>);

impl NaturalParam {
    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }
}

impl ExpectationParam {
    pub fn from_slice(v: &[f64]) -> Self {
        Self(DVector::from_column_slice(v))
    }
}

pub trait ExponentialFamily: Send + Sync {
    /// Number of natural parameters `m`.
    fn dim(&self) -> usize;

    fn in_domain(&self, theta: &DVector<f64>) -> bool;

    fn in_mean_domain(&self, eta: &DVector<f64>) -> bool;

    /// A point inside Θ used to start Newton iterations.
    fn reference_theta(&self) -> DVector<f64>;

    fn psi(&self, theta: &DVector<f64>) -> f64;

    fn grad_psi(&self, theta: &DVector<f64>) -> DVector<f64>;

    fn hess_psi(&self, theta: &DVector<f64>) -> DMatrix<f64>;

    /// Third derivative of Ψ contracted with three directions, i.e. the third
    /// cumulant of `t(x)` along `u, v, w`. Defaults to a central difference of
    /// the Hessian along `w`.
    fn third_cumulant(&self, theta: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        let h = diff::REL_STEP * theta.norm().max(1.0) / w.norm().max(f64::MIN_POSITIVE);
        let dh = (self.hess_psi(&(theta + w * h)) - self.hess_psi(&(theta - w * h))) / (2.0 * h);
        u.dot(&(dh * v))
    }

    /// Sufficient statistic `t(x)`.
    fn sufficient_stat(&self, x: &DVector<f64>) -> DVector<f64>;

    /// `log s(x)`.
    fn log_base_measure(&self, x: &DVector<f64>) -> f64;

    fn sample(&self, theta: &DVector<f64>, stream: &mut RngStream) -> DVector<f64>;

    /// Analytic inverse of `∇Ψ`, when the family has one.
    fn closed_form_theta(&self, _eta: &DVector<f64>) -> Option<DVector<f64>> {
        None
    }
}

fn check_theta<F: ExponentialFamily + ?Sized>(fam: &F, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != fam.dim() {
        return Err(Error::Domain(format!(
            "natural parameter has length {}, family dimension is {}",
            theta.len(),
            fam.dim()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) || !fam.in_domain(theta) {
        return Err(Error::Domain("natural parameter outside Θ".into()));
    }
    Ok(())
}

pub fn theta_to_eta<F: ExponentialFamily + ?Sized>(fam: &F, th: &NaturalParam) -> Result<ExpectationParam> {
    check_theta(fam, &th.0)?;
    Ok(ExpectationParam(fam.grad_psi(&th.0)))
}

pub const NEWTON_MAX_ITER: usize = 100;
pub const NEWTON_TOL: f64 = 1e-10;

/// Inverse of [`theta_to_eta`]; uses the family's closed form when available.
pub fn eta_to_theta<F: ExponentialFamily + ?Sized>(fam: &F, e: &ExpectationParam) -> Result<NaturalParam> {
    check_eta(fam, &e.0)?;
    if let Some(theta) = fam.closed_form_theta(&e.0) {
        return Ok(NaturalParam(theta));
    }
    eta_to_theta_newton(fam, e)
}

fn check_eta<F: ExponentialFamily + ?Sized>(fam: &F, eta: &DVector<f64>) -> Result<()> {
    if eta.len() != fam.dim() || eta.iter().any(|v| !v.is_finite()) || !fam.in_mean_domain(eta) {
        return Err(Error::Domain("expectation parameter outside the mean domain".into()));
    }
    Ok(())
}

/// Damped Newton on `∇Ψ(θ) = η`, minimising the convex `Ψ(θ) − θ·η` with step
/// halving. Converged when `‖∇Ψ(θ) − η‖ ≤ 1e-10 · max(1, ‖η‖)`.
pub fn eta_to_theta_newton<F: ExponentialFamily + ?Sized>(fam: &F, e: &ExpectationParam) -> Result<NaturalParam> {
    check_eta(fam, &e.0)?;
    let target = &e.0;
    let scale = target.norm().max(1.0);
    let objective = |t: &DVector<f64>| fam.psi(t) - t.dot(target);
    let mut theta = fam.reference_theta();
    let mut residual = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let r = target - fam.grad_psi(&theta);
        residual = r.norm() / scale;
        if residual <= NEWTON_TOL {
            return Ok(NaturalParam(theta));
        }
        let hess = fam.hess_psi(&theta);
        let delta = match hess.cholesky() {
            Some(ch) => ch.solve(&r),
            None => {
                return Err(Error::Convergence {
                    iterations: 0,
                    residual,
                })
            }
        };
        let f0 = objective(&theta);
        let slope = -r.dot(&delta);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &delta * t;
            if fam.in_domain(&cand) {
                let f1 = objective(&cand);
                if f1 <= f0 + 1e-4 * t * slope || (f1 - f0).abs() <= 1e-15 * f0.abs().max(1.0) {
                    theta = cand;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let r = target - fam.grad_psi(&theta);
    let final_residual = r.norm() / scale;
    if final_residual <= NEWTON_TOL {
        Ok(NaturalParam(theta))
    } else {
        Err(Error::Convergence {
            iterations: NEWTON_MAX_ITER,
            residual: final_residual.min(residual),
        })
    }
}

/// `log s(x) + θ·t(x) − Ψ(θ)`, base measure included.
pub fn log_density<F: ExponentialFamily + ?Sized>(fam: &F, th: &NaturalParam, x: &DVector<f64>) -> Result<f64> {
    check_theta(fam, &th.0)?;
    Ok(fam.log_base_measure(x) + th.0.dot(&fam.sufficient_stat(x)) - fam.psi(&th.0))
}

/// `D(p_θ ‖ p_θ̂) = (θ − θ̂)·η(θ) − Ψ(θ) + Ψ(θ̂)`.
pub fn kl_divergence<F: ExponentialFamily + ?Sized>(
    fam: &F,
    th_true: &NaturalParam,
    th_hat: &NaturalParam,
) -> Result<f64> {
    check_theta(fam, &th_true.0)?;
    check_theta(fam, &th_hat.0)?;
    let eta = fam.grad_psi(&th_true.0);
    let kl = (&th_true.0 - &th_hat.0).dot(&eta) - fam.psi(&th_true.0) + fam.psi(&th_hat.0);
    // exact zero at θ = θ̂; tiny negative values are rounding
    Ok(kl.max(0.0))
}

/// A `d`-dimensional curved model `ω ↦ θ(ω)` inside a full family.
pub trait CurvedModel: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(&self, omega: &DVector<f64>) -> DVector<f64>;

    fn in_domain(&self, _omega: &DVector<f64>) -> bool {
        true
    }

    /// Starting point for the maximum-likelihood search; rejects degenerate data.
    fn initial_point(&self, data: &DataSummary) -> Result<DVector<f64>>;
}

/// Sample count and the summed sufficient statistic of `x(1), …, x(n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSummary {
    pub n: usize,
    pub sum_t: DVector<f64>,
    /// `Σ log s(x(t))`, present when built from raw samples.
    pub sum_log_base: Option<f64>,
}

impl DataSummary {
    pub fn new(n: usize, sum_t: DVector<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("data summary needs n ≥ 1".into()));
        }
        if sum_t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite sufficient statistic".into()));
        }
        Ok(Self {
            n,
            sum_t,
            sum_log_base: None,
        })
    }

    pub fn from_mean(n: usize, mean_t: DVector<f64>) -> Result<Self> {
        Self::new(n, mean_t * n as f64)
    }

    pub fn from_samples<F: ExponentialFamily + ?Sized>(fam: &F, xs: &[DVector<f64>]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Argument("data summary needs n ≥ 1".into()));
        }
        let mut sum_t = DVector::zeros(fam.dim());
        let mut base = 0.0;
        for x in xs {
            sum_t += fam.sufficient_stat(x);
            base += fam.log_base_measure(x);
        }
        let mut s = Self::new(xs.len(), sum_t)?;
        s.sum_log_base = Some(base);
        Ok(s)
    }

    pub fn mean_t(&self) -> DVector<f64> {
        &self.sum_t / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvgLogLik {
    pub value: f64,
    pub includes_base: bool,
}

/// `(1/n) Σ log p(x(t); θ(ω))`; the base-measure term is added only when the
/// summary carries it.
pub fn avg_log_likelihood<F, M>(fam: &F, model: &M, data: &DataSummary, om: &DVector<f64>) -> Result<AvgLogLik>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    if !model.in_domain(om) {
        return Err(Error::Domain("ω outside the model domain".into()));
    }
    let theta = model.embed(om);
    check_theta(fam, &theta)?;
    let n = data.n as f64;
    let mut value = theta.dot(&data.sum_t) / n - fam.psi(&theta);
    if let Some(b) = data.sum_log_base {
        value += b / n;
    }
    Ok(AvgLogLik {
        value,
        includes_base: data.sum_log_base.is_some(),
    })
}

pub const MLE_GRAD_TOL: f64 = 1e-10;
const MLE_MAX_ITER: usize = 200;

/// Maximum-likelihood point of a curved model.
///
/// Newton ascent on `L(ω) = θ(ω)·t̄ − Ψ(θ(ω))` with gradient `J_θᵀ(t̄ − η(ω))`
/// and Hessian `Σ_i ∂_a∂_b θ^i (t̄ − η)_i − g_ab`; falls back to Fisher scoring
/// when the Hessian is not negative definite.
pub fn mle<F, M>(fam: &F, model: &M, data: &DataSummary) -> Result<DVector<f64>>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let tbar = data.mean_t();
    let mut om = model.initial_point(data)?;
    let objective = |w: &DVector<f64>| -> f64 {
        if !model.in_domain(w) {
            return f64::NEG_INFINITY;
        }
        let th = model.embed(w);
        if !fam.in_domain(&th) {
            return f64::NEG_INFINITY;
        }
        th.dot(&tbar) - fam.psi(&th)
    };
    let mut grad_norm = f64::INFINITY;
    for _ in 0..MLE_MAX_ITER {
        let theta = model.embed(&om);
        let resid = &tbar - fam.grad_psi(&theta);
        let jac = diff::jacobian(|w| model.embed(w), &om);
        let grad = jac.transpose() * &resid;
        grad_norm = grad.norm();
        if grad_norm <= MLE_GRAD_TOL {
            return Ok(om);
        }
        let fisher = jac.transpose() * fam.hess_psi(&theta) * &jac;
        let second = diff::hessian_vec(|w| model.embed(w), &om);
        let d = om.len();
        let curvature = DMatrix::from_fn(d, d, |a, b| second[a][b].dot(&resid));
        let neg_hess = &fisher - curvature;
        let dir = match neg_hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => fisher
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Geometry("rank-deficient embedding at MLE iterate".into()))?
                .solve(&grad),
        };
        let f0 = objective(&om);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &om + &dir * t;
            let f1 = objective(&cand);
            if f1.is_finite() && f1 >= f0 - 1e-14 * f0.abs().max(1.0) {
                om = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let theta = model.embed(&om);
    let jac = diff::jacobian(|w| model.embed(w), &om);
    let g = (jac.transpose() * (&tbar - fam.grad_psi(&theta))).norm();
    if g <= MLE_GRAD_TOL {
        Ok(om)
    } else {
        Err(Error::Convergence {
            iterations: MLE_MAX_ITER,
            residual: g.min(grad_norm),
        })
    }
}

/// `N(μ, σ² I_k)` with known σ²: `t(x) = x`, `θ = μ/σ²`, `Ψ = σ²‖θ‖²/2`, `η = μ`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropicGaussian {
    pub k: usize,
    pub sigma2: f64,
}

impl IsotropicGaussian {
    pub fn new(k: usize, sigma2: f64) -> Result<Self> {
        if k == 0 || !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Argument("need k ≥ 1 and σ² > 0".into()));
        }
        Ok(Self { k, sigma2 })
    }

    pub fn unit(k: usize) -> Self {
        Self { k, sigma2: 1.0 }
    }
}

impl ExponentialFamily for IsotropicGaussian {
    fn dim(&self) -> usize {
        self.k
    }
    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.iter().all(|v| v.is_finite())
    }
    fn in_mean_domain(&self, eta: &DVector<f64>) -> bool {
        eta.iter().all(|v| v.is_finite())
    }
    fn reference_theta(&self) -> DVector<f64> {
        DVector::zeros(self.k)
    }
    fn psi(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.sigma2 * theta.norm_squared()
    }
    fn grad_psi(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta * self.sigma2
    }
    fn hess_psi(&self, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.k, self.k) * self.sigma2
    }
    fn third_cumulant(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        0.0
    }
    fn sufficient_stat(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn log_base_measure(&self, x: &DVector<f64>) -> f64 {
        -0.5 * x.norm_squared() / self.sigma2 - 0.5 * self.k as f64 * (std::f64::consts::TAU * self.sigma2).ln()
    }
    fn sample(&self, theta: &DVector<f64>, stream: &mut RngStream) -> DVector<f64> {
        let sd = self.sigma2.sqrt();
        theta * self.sigma2 + stream.normal_vec(self.k) * sd
    }
    fn closed_form_theta(&self, eta: &DVector<f64>) -> Option<DVector<f64>> {
        Some(eta / self.sigma2)
    }
}

/// Number of free entries of a symmetric `l × l` matrix.
pub fn vech_len(l: usize) -> usize {
    l * (l + 1) / 2
}

/// Upper triangle, row-major: `(0,0), (0,1), …, (0,l−1), (1,1), …`.
pub fn vech_index_pairs(l: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(vech_len(l));
    for i in 0..l {
        for j in i..l {
            out.push((i, j));
        }
    }
    out
}

pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let l = m.nrows();
    DVector::from_iterator(vech_len(l), vech_index_pairs(l).into_iter().map(|(i, j)| m[(i, j)]))
}

pub fn unvech(v: &DVector<f64>, l: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(l, l);
    for (k, (i, j)) in vech_index_pairs(l).into_iter().enumerate() {
        m[(i, j)] = v[k];
        m[(j, i)] = v[k];
    }
    m
}

/// Zero-mean Gaussians `N_l(0, Σ)` as a full family of dimension `l(l+1)/2`.
///
/// Packing: `η = vech(Σ)` and `t(x) = vech(x xᵀ)`, off-diagonal entries
/// unscaled. The dual θ satisfies `θ·t(x) = −½ xᵀ Σ⁻¹ x`, i.e. with `P = Σ⁻¹`
/// `θ_ii = −½ P_ii` and `θ_ij = −P_ij` for `i < j`. Writing
/// `D(θ)_ii = 2θ_ii`, `D(θ)_ij = θ_ij`, we have `P = −D(θ)` and
/// `Ψ(θ) = −½ log det(−D(θ)) = ½ log det Σ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroMeanGaussian {
    pub l: usize,
}

impl ZeroMeanGaussian {
    pub fn new(l: usize) -> Self {
        assert!(l >= 1);
        Self { l }
    }

    /// The symmetric matrix `D(θ)`; `−D(θ)` is the precision matrix.
    pub fn direction_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut d = unvech(theta, self.l);
        for i in 0..self.l {
            d[(i, i)] *= 2.0;
        }
        d
    }

    pub fn precision(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        -self.direction_matrix(theta)
    }

    pub fn covariance(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        self.precision(theta).cholesky().map(|c| c.inverse())
    }

    /// θ encoding a given covariance.
    pub fn theta_from_covariance(&self, sigma: &DMatrix<f64>) -> Option<DVector<f64>> {
        let p = sigma.clone().cholesky()?.inverse();
        let mut theta = vech(&p) * -1.0;
        let mut k = 0;
        for i in 0..self.l {
            for j in i..self.l {
                if i == j {
                    theta[k] *= 0.5;
                }
                k += 1;
            }
        }
        Some(theta)
    }
}

impl ExponentialFamily for ZeroMeanGaussian {
    fn dim(&self) -> usize {
        vech_len(self.l)
    }
    fn in_domain(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.dim() && self.precision(theta).cholesky().is_some()
    }
    fn in_mean_domain(&self, eta: &DVector<f64>) -> bool {
        eta.len() == self.dim() && unvech(eta, self.l).cholesky().is_some()
    }
    fn reference_theta(&self) -> DVector<f64> {
        self.theta_from_covariance(&DMatrix::identity(self.l, self.l))
            .expect("identity is PD")
    }
    fn psi(&self, theta: &DVector<f64>) -> f64 {
        match self.precision(theta).cholesky() {
            Some(ch) => -ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>(),
            None => f64::INFINITY,
        }
    }
    fn grad_psi(&self, theta: &DVector<f64>) -> DVector<f64> {
        let sigma = self.covariance(theta).expect("θ outside the domain");
        vech(&sigma)
    }
    fn hess_psi(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        // ∂²Ψ/∂θ_(k,l) ∂θ_(i,j) = Σ_ki Σ_lj + Σ_kj Σ_li = Cov(x_k x_l, x_i x_j)
        let s = self.covariance(theta).expect("θ outside the domain");
        let pairs = vech_index_pairs(self.l);
        let m = pairs.len();
        DMatrix::from_fn(m, m, |r, c| {
            let (k, l) = pairs[r];
            let (i, j) = pairs[c];
            s[(k, i)] * s[(l, j)] + s[(k, j)] * s[(l, i)]
        })
    }
    fn third_cumulant(&self, theta: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        // d³Ψ[u,v,w] = tr(Σ D(u) Σ D(v) Σ D(w))
        let s = self.covariance(theta).expect("θ outside the domain");
        let a = &s * self.direction_matrix(u);
        let b = &s * self.direction_matrix(v);
        let c = &s * self.direction_matrix(w);
        (a * b * c).trace()
    }
    fn sufficient_stat(&self, x: &DVector<f64>) -> DVector<f64> {
        vech(&(x * x.transpose()))
    }
    fn log_base_measure(&self, _x: &DVector<f64>) -> f64 {
        -0.5 * self.l as f64 * std::f64::consts::TAU.ln()
    }
    fn sample(&self, theta: &DVector<f64>, stream: &mut RngStream) -> DVector<f64> {
        let sigma = self.covariance(theta).expect("θ outside the domain");
        stream.mvn_zero_mean(&sigma).expect("covariance is PD")
    }
    fn closed_form_theta(&self, eta: &DVector<f64>) -> Option<DVector<f64>> {
        self.theta_from_covariance(&unvech(eta, self.l))
    }
}

/// The full family viewed as a curved model with the identity embedding (`d = m`).
#[derive(Clone, Debug)]
pub struct FullFamilyModel<F> {
    pub family: F,
}

impl<F: ExponentialFamily + Clone> CurvedModel for FullFamilyModel<F> {
    fn dim(&self) -> usize {
        self.family.dim()
    }
    fn embed(&self, omega: &DVector<f64>) -> DVector<f64> {
        omega.clone()
    }
    fn in_domain(&self, omega: &DVector<f64>) -> bool {
        self.family.in_domain(omega)
    }
    fn initial_point(&self, data: &DataSummary) -> Result<DVector<f64>> {
        eta_to_theta(&self.family, &ExpectationParam(data.mean_t())).map(|t| t.0)
    }
}

/// Fisher circle: `N((cos ω, sin ω), σ² I₂)`, embedded as `θ(ω) = (cos ω, sin ω)/σ²`.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherCircle {
    pub sigma2: f64,
}

impl FisherCircle {
    pub fn unit() -> Self {
        Self { sigma2: 1.0 }
    }

    pub fn family(&self) -> IsotropicGaussian {
        IsotropicGaussian {
            k: 2,
            sigma2: self.sigma2,
        }
    }
}

impl CurvedModel for FisherCircle {
    fn dim(&self) -> usize {
        1
    }
    fn embed(&self, omega: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![omega[0].cos() / self.sigma2, omega[0].sin() / self.sigma2])
    }
    fn initial_point(&self, data: &DataSummary) -> Result<DVector<f64>> {
        let m = data.mean_t();
        if m.norm() == 0.0 {
            return Err(Error::Degenerate("x̄ = 0 leaves the circle MLE undefined".into()));
        }
        Ok(DVector::from_element(1, m[1].atan2(m[0])))
    }
}
