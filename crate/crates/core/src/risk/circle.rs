use std::f64::consts::TAU;

use nalgebra::{DVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_trials, RiskEstimate};
use crate::circle::{
    bessel_ratio, default_kl_rule, extended_plugin_mean, kl_bayesian_predictive_gh, mean_on_circle,
    posterior_expectation, CircleData,
};
use crate::error::{Error, Result};
use crate::expfam::{kl_divergence, DataSummary, FisherCircle, NaturalParam};
use crate::geometry::{expansion_density_shift, quadrature_inner, PriorLogRatio};
use crate::quadrature::{trapezoid, GaussHermite};
use crate::sampling::RngStream;

/// Row order of circle risk estimates. The Bayes plugin coincides with the
/// MLE plugin for this model (both put the mean at `x̄/‖x̄‖`).
pub const CIRCLE_PREDICTIVES: [&str; 3] = ["mle_plugin", "extended_plugin", "bayesian_predictive"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleTrialConfig {
    pub n: usize,
    pub sigma2: f64,
    pub trials: usize,
    pub seed: u64,
    pub omega_true: f64,
    /// Gauss–Hermite nodes per axis for the Bayesian-predictive divergence.
    pub gh_nodes: usize,
}

impl Default for CircleTrialConfig {
    fn default() -> Self {
        Self {
            n: 25,
            sigma2: 1.0,
            trials: 100_000,
            seed: 1,
            omega_true: 0.0,
            gh_nodes: 24,
        }
    }
}

impl CircleTrialConfig {
    pub fn validate(&self) -> Result<()> {
        check_trials(self.trials)?;
        if self.n == 0 || !(self.sigma2 > 0.0) || !self.omega_true.is_finite() || self.gh_nodes == 0 {
            return Err(Error::Argument(
                "circle risk needs n ≥ 1, σ² > 0, finite ω and ≥ 1 quadrature node".into(),
            ));
        }
        Ok(())
    }

    /// Leading-order risk improvement over the MLE plugin:
    /// `σ²/(8n²)` for the extended plugin, `(σ² + 2)/(8n²)` for the Bayesian predictive.
    pub fn leading_constant(&self, predictive: &str) -> Option<f64> {
        let scale = 8.0 * (self.n as f64).powi(2);
        match predictive {
            "extended_plugin" => Some(self.sigma2 / scale),
            "bayesian_predictive" => Some((self.sigma2 + 2.0) / scale),
            _ => None,
        }
    }
}

/// `x̄ ~ N(μ(ω), σ²/n I₂)`, redrawn while `x̄ = 0`. Returns the number of redraws.
fn draw_data(cfg: &CircleTrialConfig, stream: &mut RngStream) -> Result<(CircleData, usize)> {
    let mu = mean_on_circle(cfg.omega_true);
    let sd = (cfg.sigma2 / cfg.n as f64).sqrt();
    let mut redraws = 0;
    loop {
        let xbar = mu + Vector2::new(stream.normal(), stream.normal()) * sd;
        if xbar.norm() > 0.0 {
            return Ok((CircleData::with_variance(cfg.n, xbar, cfg.sigma2)?, redraws));
        }
        redraws += 1;
    }
}

fn circle_trial(cfg: &CircleTrialConfig, gh: &GaussHermite, trial: u64) -> Result<(Vec<f64>, usize)> {
    let mut stream = RngStream::new(cfg.seed, trial);
    let (data, redraws) = draw_data(cfg, &mut stream)?;
    let mu = mean_on_circle(cfg.omega_true);
    let half_prec = 0.5 / cfg.sigma2;
    let mle = half_prec * (mu - data.xbar / data.r).norm_squared();
    let ext = half_prec * (mu - extended_plugin_mean(&data).mean).norm_squared();
    let bayes = kl_bayesian_predictive_gh(cfg.omega_true, &data, gh);
    Ok((vec![mle, ext, bayes], redraws))
}

/// Paired KL risks of the three circle predictives. Plugin divergences are
/// closed form, the Bayesian predictive uses a product Gauss–Hermite rule.
pub fn run_circle_risk(cfg: &CircleTrialConfig) -> Result<RiskEstimate> {
    cfg.validate()?;
    let gh = if cfg.gh_nodes == 24 {
        default_kl_rule()
    } else {
        GaussHermite::new(cfg.gh_nodes)
    };
    let results: Vec<(Vec<f64>, usize)> = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|k| circle_trial(cfg, &gh, k))
        .collect::<Result<_>>()?;
    let resampled = results.iter().map(|r| r.1).sum();
    let losses: Vec<Vec<f64>> = results.into_iter().map(|r| r.0).collect();
    let mut est = RiskEstimate::from_losses(&CIRCLE_PREDICTIVES, &losses, &[(0, 1), (0, 2), (1, 2)])?;
    est.resampled = resampled;
    Ok(est)
}

/// One row of the expansion check at sample size `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRow {
    pub n: usize,
    /// `‖η̂_π − expansion‖` with the exact Bessel-ratio posterior mean.
    pub exact_norm_gap: f64,
    pub expansion_gap_times_n: f64,
    /// Largest `|⟨orthogonal density shift, ∂_ω p⟩|` on the quadrature grid.
    pub orthogonality_residual: f64,
    /// `max_y |p(y; η̂_π) − density expansion| / max_y p`.
    pub density_gap: f64,
}

const EXPANSION_GRID: usize = 161;
const EXPANSION_HALF_WIDTH: f64 = 9.0;

/// Compares the asymptotic expansion of the posterior mean of η (and the
/// matching density expansion) with the exact circle values at `x̄ = (r, 0)`.
pub fn verify_expansions(n_list: &[usize], r: f64) -> Result<Vec<ExpansionRow>> {
    if n_list.is_empty() || n_list.contains(&0) || !(r > 0.0) || !r.is_finite() {
        return Err(Error::Argument("need a non-empty list of n ≥ 1 and r > 0".into()));
    }
    let model = FisherCircle::unit();
    let fam = model.family();
    let (nodes, weights) = trapezoid(-EXPANSION_HALF_WIDTH, EXPANSION_HALF_WIDTH, EXPANSION_GRID);
    let mut out = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let xbar = DVector::from_vec(vec![r, 0.0]);
        let data = DataSummary::from_mean(n, xbar.clone())?;
        let centre = mean_on_circle(0.0);
        let mut grid = Vec::with_capacity(EXPANSION_GRID * EXPANSION_GRID);
        let mut w2 = Vec::with_capacity(grid.capacity());
        for (a, wa) in nodes.iter().zip(&weights) {
            for (b, wb) in nodes.iter().zip(&weights) {
                grid.push(DVector::from_vec(vec![centre[0] + a, centre[1] + b]));
                w2.push(wa * wb);
            }
        }
        let (exp, dens) = expansion_density_shift(&fam, &model, &data, &PriorLogRatio::jeffreys(), &grid)?;
        let exact = Vector2::new(bessel_ratio(n as f64 * r), 0.0);
        let est = exp.estimate().0;
        let gap = ((est[0] - exact[0]).powi(2) + (est[1] - exact[1]).powi(2)).sqrt();
        let residual = dens
            .tangents
            .iter()
            .map(|t| quadrature_inner(&dens.orthogonal, t, &dens.base, &w2).abs())
            .fold(0.0, f64::max);
        let total = dens.total();
        let mut max_p = 0.0f64;
        let mut max_gap = 0.0f64;
        for (y, approx) in grid.iter().zip(&total) {
            let p = (-0.5 * ((y[0] - exact[0]).powi(2) + (y[1] - exact[1]).powi(2))).exp() / TAU;
            max_p = max_p.max(p);
            max_gap = max_gap.max((p - approx).abs());
        }
        out.push(ExpansionRow {
            n,
            exact_norm_gap: gap,
            expansion_gap_times_n: gap * n as f64,
            orthogonality_residual: residual,
            density_gap: max_gap / max_p,
        });
    }
    Ok(out)
}

/// Posterior-expected divergence at the posterior mean of η and at perturbations of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    /// `E_post[D(p(·;ω) ‖ p(·;η̂_π))]` per data instance.
    pub base_values: Vec<f64>,
    /// Smallest `value(η̂_π + δ) − value(η̂_π)` per instance over the grid.
    pub min_margins: Vec<f64>,
    /// `[value(2δ) − value(0)] / [value(δ) − value(0)]` at the smallest radius,
    /// worst case over directions, per instance (4 for an exact quadratic).
    pub quadratic_ratios: Vec<(f64, f64)>,
    /// Value at `δ = 0` recomputed through the perturbation path, minus the base value.
    pub zero_shift_gaps: Vec<f64>,
}

const POSTERIOR_NODES: usize = 512;

fn posterior_expected_kl(data: &CircleData, eta_hat: &Vector2<f64>) -> Result<f64> {
    let fam = FisherCircle { sigma2: data.sigma2 }.family();
    let theta_hat = NaturalParam::from_slice(&[eta_hat[0] / data.sigma2, eta_hat[1] / data.sigma2]);
    let failure = std::cell::RefCell::new(None);
    let v = posterior_expectation(data, POSTERIOR_NODES, |w| {
        let mu = mean_on_circle(w);
        let th = NaturalParam::from_slice(&[mu[0] / data.sigma2, mu[1] / data.sigma2]);
        match kl_divergence(&fam, &th, &theta_hat) {
            Ok(v) => v,
            Err(e) => {
                *failure.borrow_mut() = Some(e);
                0.0
            }
        }
    });
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// Checks that the posterior mean of η minimises the posterior-expected
/// divergence among nearby plugins: perturbations of radius `radii` in
/// `directions` equally spaced directions.
pub fn bayes_risk_optimality_check(
    instances: &[CircleData],
    radii: &[f64],
    directions: usize,
) -> Result<OptimalityReport> {
    if instances.is_empty() || radii.is_empty() || directions == 0 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Argument(
            "need instances, positive radii and at least one direction".into(),
        ));
    }
    let small = radii.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut report = OptimalityReport {
        base_values: vec![],
        min_margins: vec![],
        quadratic_ratios: vec![],
        zero_shift_gaps: vec![],
    };
    for data in instances {
        let centre = posterior_expectation(data, POSTERIOR_NODES, mean_on_circle);
        let base = posterior_expected_kl(data, &centre)?;
        let shifted = |delta: Vector2<f64>| posterior_expected_kl(data, &(centre + delta));
        let mut margin = f64::INFINITY;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..directions {
            let angle = TAU * k as f64 / directions as f64;
            let dir = Vector2::new(angle.cos(), angle.sin());
            for &rad in radii {
                let v = shifted(dir * rad)?;
                margin = margin.min(v - base);
                if rad == small {
                    let v2 = shifted(dir * (2.0 * rad))?;
                    let ratio = (v2 - base) / (v - base);
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
            }
        }
        report.zero_shift_gaps.push(shifted(Vector2::zeros())? - base);
        report.base_values.push(base);
        report.min_margins.push(margin);
        report.quadratic_ratios.push((lo, hi));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(trials: usize, threads_seed: u64) -> CircleTrialConfig {
        CircleTrialConfig {
            n: 10,
            sigma2: 1.0,
            trials,
            seed: threads_seed,
            ..Default::default()
        }
    }

    #[test]
    fn estimates_are_deterministic_and_order_free() {
        let a = run_circle_risk(&cfg(500, 7)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_circle_risk(&cfg(500, 7)).unwrap());
        assert_eq!(a, b);
        let c = run_circle_risk(&cfg(500, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn losses_are_nonnegative_and_paired() {
        let est = run_circle_risk(&cfg(2000, 3)).unwrap();
        assert!(est.risks.iter().all(|r| r.mean >= 0.0 && r.stderr >= 0.0));
        for d in &est.diffs {
            let a = est.risk(&d.minuend).unwrap().stderr;
            let b = est.risk(&d.subtrahend).unwrap().stderr;
            assert!(d.stderr <= a + b);
        }
        // the posterior mean shrinks toward the origin, so it always beats x̄/‖x̄‖ here
        assert!(est.diff("mle_plugin", "extended_plugin").unwrap().mean > 0.0);
        assert_eq!(est.resampled, 0);
    }

    #[test]
    fn rejects_zero_trials() {
        assert!(matches!(run_circle_risk(&cfg(0, 1)), Err(Error::Argument(_))));
    }

    #[test]
    fn constants() {
        let c = CircleTrialConfig {
            n: 25,
            sigma2: 4.0,
            ..Default::default()
        };
        assert_eq!(c.leading_constant("extended_plugin"), Some(4.0 / 5000.0));
        assert_eq!(c.leading_constant("bayesian_predictive"), Some(6.0 / 5000.0));
        assert_eq!(c.leading_constant("mle_plugin"), None);
    }

    #[test]
    fn expansion_rows() {
        let rows = verify_expansions(&[50, 100, 200, 400], 1.0).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].expansion_gap_times_n < w[0].expansion_gap_times_n);
        }
        for row in &rows {
            assert!(row.expansion_gap_times_n <= 2.0 / row.n as f64);
            assert!(row.orthogonality_residual <= 1e-6, "{}", row.orthogonality_residual);
        }
        let r100 = &rows[1];
        // η(ω̂)(1 − 1/(2n)) is the expansion itself at r = 1
        assert!(r100.exact_norm_gap <= 2.0 / 100f64.powi(2));
        let r200 = &rows[2];
        assert!(r200.density_gap <= 5.0 / 200f64.powi(2), "{}", r200.density_gap);
        assert!(verify_expansions(&[], 1.0).is_err());
    }

    #[test]
    fn posterior_mean_is_optimal() {
        let mut s = RngStream::new(5, 0);
        let instances: Vec<_> = (0..3)
            .map(|_| {
                let xbar = Vector2::new(1.0 + 0.3 * s.normal(), 0.3 * s.normal());
                CircleData::new(8, xbar).unwrap()
            })
            .collect();
        let rep = bayes_risk_optimality_check(&instances, &[1e-2, 1e-1], 16).unwrap();
        for i in 0..3 {
            assert!(rep.min_margins[i] > 0.0);
            assert!(rep.zero_shift_gaps[i].abs() <= 1e-15);
            let (lo, hi) = rep.quadratic_ratios[i];
            assert!(lo >= 3.2 && hi <= 4.8, "{lo} {hi}");
        }
    }
}
