//! Information geometry of a curved model inside its enveloping full family.
//!
//! Everything is evaluated at a single point ω. Derivatives of the embedding
//! come from central finite differences (see [`crate::diff`]); Ψ-derivatives
//! come from the family itself. The skewness tensor is computed from third
//! cumulants of `t(x)`, independently of the two connections, so the identity
//! `Γ^(m) − Γ^(e) = T` is a genuine consistency check.
//!
//! Tangent vectors of the full family are expressed in η-coordinates; their
//! Fisher inner product is `⟨v, w⟩ = vᵀ (∇²Ψ)⁻¹ w`.

use std::ops::{Index, IndexMut};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::diff;
use crate::error::{Error, Result};
use crate::expfam::{log_density, mle, CurvedModel, DataSummary, ExpectationParam, ExponentialFamily, NaturalParam};

/// Dense rank-3 array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape[0] * shape[1] * shape[2]],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn offset(&self, (a, b, c): (usize, usize, usize)) -> usize {
        debug_assert!(a < self.shape[0] && b < self.shape[1] && c < self.shape[2]);
        (a * self.shape[1] + b) * self.shape[2] + c
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Index<(usize, usize, usize)> for Tensor3 {
    type Output = f64;
    fn index(&self, idx: (usize, usize, usize)) -> &f64 {
        &self.data[self.offset(idx)]
    }
}

impl IndexMut<(usize, usize, usize)> for Tensor3 {
    fn index_mut(&mut self, idx: (usize, usize, usize)) -> &mut f64 {
        let o = self.offset(idx);
        &mut self.data[o]
    }
}

/// θ(ω), η(ω) and their first and second ω-derivatives.
#[derive(Clone, Debug)]
pub struct EmbeddingJet {
    pub omega: DVector<f64>,
    pub theta: DVector<f64>,
    pub eta: DVector<f64>,
    pub hess_psi: DMatrix<f64>,
    /// `m × d`, column `a` is `∂_a θ`.
    pub dtheta: DMatrix<f64>,
    /// `m × d`, column `a` is `∂_a η = ∇²Ψ ∂_a θ`.
    pub deta: DMatrix<f64>,
    pub d2theta: Vec<Vec<DVector<f64>>>,
    pub d2eta: Vec<Vec<DVector<f64>>>,
}

impl EmbeddingJet {
    pub fn at<F, M>(fam: &F, model: &M, om: &DVector<f64>) -> Result<Self>
    where
        F: ExponentialFamily + ?Sized,
        M: CurvedModel + ?Sized,
    {
        if om.len() != model.dim() || !model.in_domain(om) {
            return Err(Error::Domain("ω outside the model domain".into()));
        }
        let theta = model.embed(om);
        if !fam.in_domain(&theta) {
            return Err(Error::Domain("θ(ω) outside Θ".into()));
        }
        let eta_of = |w: &DVector<f64>| fam.grad_psi(&model.embed(w));
        let hess_psi = fam.hess_psi(&theta);
        let dtheta = diff::jacobian(|w| model.embed(w), om);
        let deta = &hess_psi * &dtheta;
        Ok(Self {
            omega: om.clone(),
            eta: fam.grad_psi(&theta),
            d2theta: diff::hessian_vec(|w| model.embed(w), om),
            d2eta: diff::hessian_vec(eta_of, om),
            theta,
            hess_psi,
            dtheta,
            deta,
        })
    }

    pub fn d(&self) -> usize {
        self.dtheta.ncols()
    }

    pub fn m(&self) -> usize {
        self.dtheta.nrows()
    }
}

#[derive(Clone, Debug)]
pub struct GeometryReport {
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub gamma_e: Tensor3,
    pub gamma_m: Tensor3,
    pub skew: Tensor3,
    /// `T_a = T_abc g^{bc}`.
    pub skew_vec: DVector<f64>,
    /// Jeffreys density `√det g`.
    pub jeffreys: f64,
}

impl GeometryReport {
    /// `Γ^(m)_ab^c = Γ^(m)_abd g^{dc}`.
    pub fn gamma_m_raised(&self) -> Tensor3 {
        raise_last(&self.gamma_m, &self.g_inv)
    }
}

fn raise_last(t: &Tensor3, inv: &DMatrix<f64>) -> Tensor3 {
    let [d0, d1, d2] = t.shape();
    let mut out = Tensor3::zeros([d0, d1, d2]);
    for a in 0..d0 {
        for b in 0..d1 {
            for c in 0..d2 {
                out[(a, b, c)] = (0..d2).map(|e| t[(a, b, e)] * inv[(e, c)]).sum();
            }
        }
    }
    out
}

fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or_else(|| Error::Geometry(format!("{what} is not positive definite")))
}

pub fn geometry_at<F, M>(fam: &F, model: &M, om: &DVector<f64>) -> Result<GeometryReport>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let jet = EmbeddingJet::at(fam, model, om)?;
    geometry_from_jet(fam, &jet)
}

pub fn geometry_from_jet<F: ExponentialFamily + ?Sized>(fam: &F, jet: &EmbeddingJet) -> Result<GeometryReport> {
    let d = jet.d();
    let g = jet.dtheta.transpose() * &jet.deta;
    let g = (&g + g.transpose()) * 0.5;
    let chol = spd_cholesky(&g, "Fisher metric")?;
    let g_inv = chol.inverse();
    let jeffreys = chol.l().diagonal().product();

    let mut gamma_e = Tensor3::zeros([d, d, d]);
    let mut gamma_m = Tensor3::zeros([d, d, d]);
    let mut skew = Tensor3::zeros([d, d, d]);
    let cols: Vec<DVector<f64>> = (0..d).map(|a| jet.dtheta.column(a).into_owned()).collect();
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                gamma_e[(a, b, c)] = jet.d2theta[a][b].dot(&jet.deta.column(c));
                gamma_m[(a, b, c)] = jet.d2eta[a][b].dot(&jet.dtheta.column(c));
                if a <= b && b <= c {
                    skew[(a, b, c)] = fam.third_cumulant(&jet.theta, &cols[a], &cols[b], &cols[c]);
                }
            }
        }
    }
    for a in 0..d {
        for b in 0..d {
            for c in 0..d {
                let mut k = [a, b, c];
                k.sort_unstable();
                skew[(a, b, c)] = skew[(k[0], k[1], k[2])];
            }
        }
    }
    let skew_vec = DVector::from_fn(d, |a, _| {
        let mut s = 0.0;
        for b in 0..d {
            for c in 0..d {
                s += skew[(a, b, c)] * g_inv[(b, c)];
            }
        }
        s
    });
    Ok(GeometryReport {
        g,
        g_inv,
        gamma_e,
        gamma_m,
        skew,
        skew_vec,
        jeffreys,
    })
}

/// Orthonormal complement of the model tangent space inside `T_η 𝓔`.
#[derive(Clone, Debug)]
pub struct AncillaryFrame {
    /// `m − d` vectors in η-coordinates.
    pub basis: Vec<DVector<f64>>,
    /// Gram matrix `g_κλ` of the basis.
    pub g_orth: DMatrix<f64>,
}

impl AncillaryFrame {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// θ-coordinates `∂_κ θ = (∇²Ψ)⁻¹ v_κ` of each frame vector.
    pub fn theta_directions(&self, hess_chol: &Cholesky<f64, Dyn>) -> Vec<DVector<f64>> {
        self.basis.iter().map(|v| hess_chol.solve(v)).collect()
    }
}

pub fn ancillary_frame<F, M>(fam: &F, model: &M, om: &DVector<f64>) -> Result<AncillaryFrame>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let jet = EmbeddingJet::at(fam, model, om)?;
    frame_from_jet(&jet)
}

/// Gram–Schmidt over the canonical η-basis `e_1, …, e_m`, in order, after
/// projecting out the model tangents `∂_a η`.
pub fn frame_from_jet(jet: &EmbeddingJet) -> Result<AncillaryFrame> {
    let m = jet.m();
    let d = jet.d();
    let hess = spd_cholesky(&jet.hess_psi, "∇²Ψ")?;
    let g = jet.dtheta.transpose() * &jet.deta;
    let g_chol = spd_cholesky(&((&g + g.transpose()) * 0.5), "Fisher metric")?;
    let inner = |v: &DVector<f64>, w: &DVector<f64>| v.dot(&hess.solve(w));

    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m - d);
    for i in 0..m {
        if basis.len() == m - d {
            break;
        }
        let e = DVector::from_fn(m, |k, _| if k == i { 1.0 } else { 0.0 });
        let e_norm = inner(&e, &e).sqrt();
        // tangent component: ∂η g⁻¹ ⟨∂η, e⟩, and ⟨∂_a η, e⟩ = ∂_a θ · e
        let coeff = g_chol.solve(&(jet.dtheta.transpose() * &e));
        let mut v = &e - &jet.deta * coeff;
        for _ in 0..2 {
            let coeff = g_chol.solve(&(jet.dtheta.transpose() * &v));
            v -= &jet.deta * coeff;
            for b in &basis {
                let proj = inner(b, &v);
                v -= b * proj;
            }
        }
        let norm = inner(&v, &v).sqrt();
        if norm > 1e-8 * e_norm {
            basis.push(v / norm);
        }
    }
    if basis.len() != m - d {
        return Err(Error::Geometry("ancillary complement is rank deficient".into()));
    }
    let k = basis.len();
    let g_orth = DMatrix::from_fn(k, k, |a, b| inner(&basis[a], &basis[b]));
    Ok(AncillaryFrame { basis, g_orth })
}

/// `H_abκ = (∂_a∂_b η_i)(∂_κ θ^i)`, shape `d × d × (m − d)`.
#[derive(Clone, Debug)]
pub struct EmbeddingCurvature {
    pub h: Tensor3,
}

pub fn embedding_curvature(jet: &EmbeddingJet, frame: &AncillaryFrame) -> Result<EmbeddingCurvature> {
    let d = jet.d();
    let hess = spd_cholesky(&jet.hess_psi, "∇²Ψ")?;
    let dirs = frame.theta_directions(&hess);
    let mut h = Tensor3::zeros([d, d, dirs.len()]);
    for a in 0..d {
        for b in 0..d {
            for (k, dir) in dirs.iter().enumerate() {
                h[(a, b, k)] = jet.d2eta[a][b].dot(dir);
            }
        }
    }
    Ok(EmbeddingCurvature { h })
}

/// Parallel (`α^a`) and orthogonal (`β^κ`) shift coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftVector {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

/// Everything at a point: jet, geometry, frame and curvature.
#[derive(Clone, Debug)]
pub struct PointGeometry {
    pub jet: EmbeddingJet,
    pub report: GeometryReport,
    pub frame: AncillaryFrame,
    pub curvature: EmbeddingCurvature,
}

impl PointGeometry {
    pub fn at<F, M>(fam: &F, model: &M, om: &DVector<f64>) -> Result<Self>
    where
        F: ExponentialFamily + ?Sized,
        M: CurvedModel + ?Sized,
    {
        let jet = EmbeddingJet::at(fam, model, om)?;
        let report = geometry_from_jet(fam, &jet)?;
        let frame = frame_from_jet(&jet)?;
        let curvature = embedding_curvature(&jet, &frame)?;
        Ok(Self {
            jet,
            report,
            frame,
            curvature,
        })
    }

    /// Mean-curvature vector `c_κ = H_abκ g^{ab}`.
    fn mean_curvature(&self) -> DVector<f64> {
        let d = self.jet.d();
        let g_inv = &self.report.g_inv;
        DVector::from_fn(self.frame.dim(), |k, _| {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    s += self.curvature.h[(a, b, k)] * g_inv[(a, b)];
                }
            }
            s
        })
    }

    /// `β^κ = ½ H_ab^κ g^{ab}`.
    pub fn optimal_beta(&self) -> Result<DVector<f64>> {
        if self.frame.dim() == 0 {
            return Ok(DVector::zeros(0));
        }
        let chol = spd_cholesky(&self.frame.g_orth, "ancillary Gram matrix")?;
        Ok(chol.solve(&self.mean_curvature()) * 0.5)
    }

    /// Squared mixture mean curvature `H_ab^λ H_cd^κ g^{ab} g^{cd} g_κλ`.
    pub fn mean_curvature_sq(&self) -> Result<f64> {
        if self.frame.dim() == 0 {
            return Ok(0.0);
        }
        let c = self.mean_curvature();
        let chol = spd_cholesky(&self.frame.g_orth, "ancillary Gram matrix")?;
        Ok(c.dot(&chol.solve(&c)))
    }

    /// The η-vector `Σ_κ β^κ v_κ` induced by a frame shift.
    pub fn frame_shift(&self, beta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.jet.m());
        for (k, v) in self.frame.basis.iter().enumerate() {
            out += v * beta[k];
        }
        out
    }

    /// `h_ab = ∂_a∂_b η − Γ^(m)_ab^c ∂_c η` as an η-vector.
    pub fn orthogonal_direction(&self, a: usize, b: usize) -> DVector<f64> {
        let raised = self.report.gamma_m_raised();
        let mut v = self.jet.d2eta[a][b].clone();
        for c in 0..self.jet.d() {
            v -= self.jet.deta.column(c) * raised[(a, b, c)];
        }
        v
    }

    /// `½ g^{ab} h_ab`: the orthogonal η-shift of the Bayes extended estimator per unit 1/n.
    pub fn mean_orthogonal_direction(&self) -> DVector<f64> {
        let d = self.jet.d();
        let mut v = DVector::zeros(self.jet.m());
        for a in 0..d {
            for b in 0..d {
                v += self.orthogonal_direction(a, b) * (0.5 * self.report.g_inv[(a, b)]);
            }
        }
        v
    }

    /// `α^a = g^{ab}(∂_b log(π/π_J) + T_b/2)`.
    pub fn alpha(&self, prior_grad: &DVector<f64>) -> DVector<f64> {
        &self.report.g_inv * (prior_grad + &self.report.skew_vec * 0.5)
    }
}

pub fn optimal_beta<F, M>(fam: &F, model: &M, om: &DVector<f64>) -> Result<ShiftVector>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let pg = PointGeometry::at(fam, model, om)?;
    Ok(ShiftVector {
        alpha: DVector::zeros(pg.jet.d()),
        beta: pg.optimal_beta()?,
    })
}

/// `(1/(8n²)) H_ab^λ H_cd^κ g^{ab} g^{cd} g_κλ`.
pub fn risk_improvement<F, M>(fam: &F, model: &M, om: &DVector<f64>, n: usize) -> Result<f64>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let pg = PointGeometry::at(fam, model, om)?;
    let n = n as f64;
    Ok(pg.mean_curvature_sq()? / (8.0 * n * n))
}

/// Cosine of the angle between two orthogonal shifts, from their risk improvements.
pub fn projection_angle_cos(improvement_in_e: f64, improvement_in_f: f64) -> Result<f64> {
    if !(improvement_in_f > 0.0) || !(improvement_in_e >= 0.0) || improvement_in_e > improvement_in_f {
        return Err(Error::Argument(format!(
            "need 0 ≤ improvement in E ({improvement_in_e}) ≤ improvement in F ({improvement_in_f}) and F > 0"
        )));
    }
    Ok((improvement_in_e / improvement_in_f).sqrt())
}

type ScalarFn<'a> = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync + 'a>;
type VectorFn<'a> = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'a>;

/// `log(π/π_J)` on Ω, with an optional analytic gradient.
pub struct PriorLogRatio<'a> {
    value: ScalarFn<'a>,
    gradient: Option<VectorFn<'a>>,
}

impl Default for PriorLogRatio<'_> {
    /// π = π_J.
    fn default() -> Self {
        Self {
            value: Box::new(|_| 0.0),
            gradient: Some(Box::new(|w| DVector::zeros(w.len()))),
        }
    }
}

impl<'a> PriorLogRatio<'a> {
    pub fn jeffreys() -> Self {
        Self::default()
    }

    pub fn from_fn(f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'a) -> Self {
        Self {
            value: Box::new(f),
            gradient: None,
        }
    }

    pub fn with_gradient(
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'a,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'a,
    ) -> Self {
        Self {
            value: Box::new(f),
            gradient: Some(Box::new(grad)),
        }
    }

    pub fn value(&self, om: &DVector<f64>) -> f64 {
        (self.value)(om)
    }

    pub fn gradient(&self, om: &DVector<f64>) -> DVector<f64> {
        match &self.gradient {
            Some(g) => g(om),
            None => diff::gradient(|w| (self.value)(w), om),
        }
    }
}

/// The asymptotic expansion of the Bayes extended estimator around the MLE.
#[derive(Clone, Debug)]
pub struct EstimatorExpansion {
    pub omega_mle: DVector<f64>,
    pub eta_mle: DVector<f64>,
    /// `(g^{ab}/2n)(∂_a∂_b η − Γ^(m)_ab^c ∂_c η)`.
    pub orthogonal: DVector<f64>,
    /// `(g^{ab}/n)(∂_b log(π/π_J) + T_b/2) ∂_a η`.
    pub parallel: DVector<f64>,
    pub geometry: PointGeometry,
}

impl EstimatorExpansion {
    pub fn estimate(&self) -> ExpectationParam {
        ExpectationParam(&self.eta_mle + &self.orthogonal + &self.parallel)
    }
}

pub fn expansion_estimator<F, M>(
    fam: &F,
    model: &M,
    data: &DataSummary,
    prior: &PriorLogRatio<'_>,
) -> Result<EstimatorExpansion>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let om = mle(fam, model, data)?;
    let pg = PointGeometry::at(fam, model, &om)?;
    let n = data.n as f64;
    let orthogonal = pg.mean_orthogonal_direction() / n;
    let alpha = pg.alpha(&prior.gradient(&om));
    let parallel = &pg.jet.deta * alpha / n;
    Ok(EstimatorExpansion {
        omega_mle: om,
        eta_mle: pg.jet.eta.clone(),
        orthogonal,
        parallel,
        geometry: pg,
    })
}

/// Theorem-2 style density expansion evaluated on a set of points.
#[derive(Clone, Debug)]
pub struct DensityExpansion {
    /// `p(y; η(ω̂_MLE))`.
    pub base: Vec<f64>,
    pub parallel: Vec<f64>,
    pub orthogonal: Vec<f64>,
    /// `∂_a p(y; ω̂_MLE)`, one row per model coordinate.
    pub tangents: Vec<Vec<f64>>,
}

impl DensityExpansion {
    pub fn total(&self) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.parallel)
            .zip(&self.orthogonal)
            .map(|((b, p), o)| b + p + o)
            .collect()
    }
}

/// `p(y;η) · (t(y) − η)ᵀ (∇²Ψ)⁻¹ δ`: first-order change of the density for an η-shift δ.
fn density_directional<F: ExponentialFamily + ?Sized>(
    fam: &F,
    p: f64,
    eta: &DVector<f64>,
    y: &DVector<f64>,
    theta_dir: &DVector<f64>,
) -> f64 {
    p * (fam.sufficient_stat(y) - eta).dot(theta_dir)
}

pub fn expansion_density_shift<F, M>(
    fam: &F,
    model: &M,
    data: &DataSummary,
    prior: &PriorLogRatio<'_>,
    y_grid: &[DVector<f64>],
) -> Result<(EstimatorExpansion, DensityExpansion)>
where
    F: ExponentialFamily + ?Sized,
    M: CurvedModel + ?Sized,
{
    let exp = expansion_estimator(fam, model, data, prior)?;
    let jet = &exp.geometry.jet;
    let hess = spd_cholesky(&jet.hess_psi, "∇²Ψ")?;
    let orth_dir = hess.solve(&exp.orthogonal);
    let par_dir = hess.solve(&exp.parallel);
    let theta = NaturalParam(jet.theta.clone());
    let d = jet.d();
    let mut out = DensityExpansion {
        base: Vec::with_capacity(y_grid.len()),
        parallel: Vec::with_capacity(y_grid.len()),
        orthogonal: Vec::with_capacity(y_grid.len()),
        tangents: vec![Vec::with_capacity(y_grid.len()); d],
    };
    for y in y_grid {
        let p = log_density(fam, &theta, y)?.exp();
        out.base.push(p);
        out.parallel.push(density_directional(fam, p, &jet.eta, y, &par_dir));
        out.orthogonal.push(density_directional(fam, p, &jet.eta, y, &orth_dir));
        for (a, row) in out.tangents.iter_mut().enumerate() {
            row.push(density_directional(
                fam,
                p,
                &jet.eta,
                y,
                &jet.dtheta.column(a).into_owned(),
            ));
        }
    }
    Ok((exp, out))
}

/// Discretised Fisher inner product `Σ_k w_k f(y_k) h(y_k) / p(y_k)`.
pub fn quadrature_inner(f: &[f64], h: &[f64], p: &[f64], weights: &[f64]) -> f64 {
    f.iter()
        .zip(h)
        .zip(p)
        .zip(weights)
        .filter(|(((_, _), p), _)| **p > 0.0)
        .map(|(((f, h), p), w)| w * f * h / p)
        .sum()
}

/// `⟨∂p/∂θ^i, ∂p/∂η_j⟩ = Cov(t) (∇²Ψ)⁻¹` with `Cov(t) = ∇²Ψ`.
pub fn duality_matrix<F: ExponentialFamily + ?Sized>(fam: &F, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let hess = fam.hess_psi(theta);
    let chol = spd_cholesky(&hess, "∇²Ψ")?;
    Ok(&hess * chol.inverse())
}
