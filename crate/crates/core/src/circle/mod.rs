//! Closed forms for the Fisher circle model `N((cos ω, sin ω), σ² I₂)` under the
//! uniform prior on ω: posterior, the plugin of the Bayes estimator, the plugin
//! of the posterior mean of η, and the Bayesian predictive density.
//!
//! With `κ = n‖x̄‖/σ²` the posterior is von Mises with concentration κ around
//! φ = atan2(x̄), so every predictive reduces to modified Bessel functions.

pub mod bessel;

use std::f64::consts::TAU;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::quadrature::{periodic_nodes, trapezoid, GaussHermite};

pub use bessel::{bessel_i0, bessel_i1, bessel_ratio, log_bessel_i0};

/// Reduces an angle to `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

pub fn mean_on_circle(om: f64) -> Vector2<f64> {
    Vector2::new(om.cos(), om.sin())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CircleData {
    pub n: usize,
    pub xbar: Vector2<f64>,
    pub r: f64,
    pub phi: f64,
    pub sigma2: f64,
}

impl CircleData {
    pub fn new(n: usize, xbar: Vector2<f64>) -> Result<Self> {
        Self::with_variance(n, xbar, 1.0)
    }

    pub fn with_variance(n: usize, xbar: Vector2<f64>, sigma2: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        if !(sigma2 > 0.0) || !xbar.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("need finite x̄ and σ² > 0".into()));
        }
        let r = xbar.norm();
        let phi = wrap_angle(xbar[1].atan2(xbar[0]));
        Ok(Self {
            n,
            xbar,
            r,
            phi,
            sigma2,
        })
    }

    pub fn from_samples(xs: &[Vector2<f64>], sigma2: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Argument("no samples".into()));
        }
        let sum: Vector2<f64> = xs.iter().sum();
        Self::with_variance(xs.len(), sum / xs.len() as f64, sigma2)
    }

    /// Posterior concentration `n‖x̄‖/σ²`.
    pub fn kappa(&self) -> f64 {
        self.n as f64 * self.r / self.sigma2
    }
}

/// `log p_π(ω | xⁿ) = κ cos(ω − φ) − log 2π − log I₀(κ)`.
pub fn posterior_log_density(data: &CircleData, om: f64) -> f64 {
    let k = data.kappa();
    k * (om - data.phi).cos() - TAU.ln() - log_bessel_i0(k)
}

/// Posterior expectation of `f(ω)` by the periodic trapezoid rule.
pub fn posterior_expectation<T>(data: &CircleData, nodes: usize, f: impl Fn(f64) -> T) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let h = TAU / nodes as f64;
    let mut it = periodic_nodes(nodes).map(|w| f(w) * (posterior_log_density(data, w).exp() * h));
    let first = it.next().expect("at least one node");
    it.fold(first, |acc, v| acc + v)
}

/// Plugin of the Bayes estimator: `x̄/‖x̄‖`.
pub fn bayes_plugin_mean(data: &CircleData) -> Result<Vector2<f64>> {
    if data.r == 0.0 {
        return Err(Error::Degenerate(
            "x̄ = 0: the posterior is uniform and φ undefined".into(),
        ));
    }
    Ok(data.xbar / data.r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtendedMean {
    pub mean: Vector2<f64>,
    /// Set when x̄ = 0 and the mean is the symmetric value (0, 0).
    pub degenerate: bool,
}

/// Posterior mean of η = (cos ω, sin ω): `(I₁(κ)/I₀(κ)) x̄/‖x̄‖`.
pub fn extended_plugin_mean(data: &CircleData) -> ExtendedMean {
    if data.r == 0.0 {
        return ExtendedMean {
            mean: Vector2::zeros(),
            degenerate: true,
        };
    }
    ExtendedMean {
        mean: data.xbar / data.r * bessel_ratio(data.kappa()),
        degenerate: false,
    }
}

/// `log p_π(y | xⁿ) = log I₀(‖y + n x̄‖/σ²) − log I₀(κ) − (‖y‖² + 1)/(2σ²) − log(2πσ²)`.
pub fn bayesian_predictive_log_density(data: &CircleData, y: &Vector2<f64>) -> f64 {
    let s2 = data.sigma2;
    let arg = (y + data.xbar * data.n as f64).norm() / s2;
    log_bessel_i0(arg) - log_bessel_i0(data.kappa()) - 0.5 * (y.norm_squared() + 1.0) / s2 - (TAU * s2).ln()
}

fn gaussian_log_density(y: &Vector2<f64>, mean: &Vector2<f64>, sigma2: f64) -> f64 {
    -0.5 * (y - mean).norm_squared() / sigma2 - (TAU * sigma2).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub enum CirclePredictive {
    BayesPlugin { mean: Vector2<f64>, sigma2: f64 },
    ExtendedPlugin { mean: Vector2<f64>, sigma2: f64 },
    BayesianPredictive { data: CircleData },
}

impl CirclePredictive {
    pub fn bayes_plugin(data: &CircleData) -> Result<Self> {
        Ok(Self::BayesPlugin {
            mean: bayes_plugin_mean(data)?,
            sigma2: data.sigma2,
        })
    }

    pub fn extended_plugin(data: &CircleData) -> Self {
        Self::ExtendedPlugin {
            mean: extended_plugin_mean(data).mean,
            sigma2: data.sigma2,
        }
    }

    pub fn bayesian(data: &CircleData) -> Self {
        Self::BayesianPredictive { data: data.clone() }
    }

    pub fn sigma2(&self) -> f64 {
        match self {
            Self::BayesPlugin { sigma2, .. } | Self::ExtendedPlugin { sigma2, .. } => *sigma2,
            Self::BayesianPredictive { data } => data.sigma2,
        }
    }

    pub fn log_density(&self, y: &Vector2<f64>) -> f64 {
        match self {
            Self::BayesPlugin { mean, sigma2 } | Self::ExtendedPlugin { mean, sigma2 } => {
                gaussian_log_density(y, mean, *sigma2)
            }
            Self::BayesianPredictive { data } => bayesian_predictive_log_density(data, y),
        }
    }
}

/// Nodes per axis and half-width (in standard deviations) of the tensor rule
/// used for the Bayesian-predictive divergence.
pub const KL_QUADRATURE_NODES: usize = 200;
pub const KL_QUADRATURE_RADIUS: f64 = 8.0;

/// `D(p(·; ω_true) ‖ p̂)`. Plugin kinds in closed form; the Bayesian
/// predictive by a 200 × 200 trapezoid rule on the square of half-width 8σ
/// around the true mean.
pub fn kl_true_vs_predictive(om_true: f64, predictive: &CirclePredictive) -> f64 {
    let mu = mean_on_circle(om_true);
    match predictive {
        CirclePredictive::BayesPlugin { mean, sigma2 } | CirclePredictive::ExtendedPlugin { mean, sigma2 } => {
            0.5 * (mu - mean).norm_squared() / sigma2
        }
        CirclePredictive::BayesianPredictive { data } => {
            let s2 = data.sigma2;
            let half = KL_QUADRATURE_RADIUS * s2.sqrt();
            let (xs, wx) = trapezoid(mu[0] - half, mu[0] + half, KL_QUADRATURE_NODES);
            let (ys, wy) = trapezoid(mu[1] - half, mu[1] + half, KL_QUADRATURE_NODES);
            let mut total = 0.0;
            for (x, a) in xs.iter().zip(&wx) {
                for (y, b) in ys.iter().zip(&wy) {
                    let p = Vector2::new(*x, *y);
                    let lt = gaussian_log_density(&p, &mu, s2);
                    total += a * b * lt.exp() * (lt - bayesian_predictive_log_density(data, &p));
                }
            }
            total
        }
    }
}

/// Divergence to the Bayesian predictive via the exact reduction
/// `1/σ² + log I₀(κ) − E[log I₀(‖y + n x̄‖/σ²)]`, `y ~ N(μ(ω), σ² I₂)`,
/// with the expectation taken by a product Gauss–Hermite rule in coordinates
/// aligned with `μ + n x̄`. `log I₀(‖z‖)` is analytic in `z`, so the rule
/// converges spectrally.
pub fn kl_bayesian_predictive_gh(om_true: f64, data: &CircleData, gh: &GaussHermite) -> f64 {
    let s2 = data.sigma2;
    let s = s2.sqrt();
    let centre = mean_on_circle(om_true) + data.xbar * data.n as f64;
    let rho = centre.norm() / s;
    let mut e = 0.0;
    for (u, wu) in gh.nodes.iter().zip(&gh.weights) {
        let a = rho + u;
        for (v, wv) in gh.nodes.iter().zip(&gh.weights) {
            e += wu * wv * log_bessel_i0((a * a + v * v).sqrt() / s);
        }
    }
    1.0 / s2 + log_bessel_i0(data.kappa()) - e
}

/// Pre-built Gauss–Hermite rule for [`kl_bayesian_predictive_gh`].
pub fn default_kl_rule() -> GaussHermite {
    GaussHermite::new(24)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data(n: usize, r: f64, phi: f64) -> CircleData {
        CircleData::new(n, Vector2::new(r * phi.cos(), r * phi.sin())).unwrap()
    }

    #[test]
    fn data_invariants() {
        let d = data(4, 0.7, 2.0);
        assert_relative_eq!(
            d.xbar,
            Vector2::new(d.r * d.phi.cos(), d.r * d.phi.sin()),
            epsilon = 1e-12
        );
        assert!(CircleData::new(0, Vector2::new(1.0, 0.0)).is_err());
        assert!((0.0..TAU).contains(&data(1, 1.0, -0.5).phi));
    }

    #[test]
    fn posterior_normalises_and_peaks_at_phi() {
        for (n, r) in [(5, 0.3), (20, 1.0), (3, 0.0)] {
            let d = data(n, r, 1.2);
            let z = posterior_expectation(&d, 4096, |_| 1.0);
            assert!((z - 1.0).abs() <= 1e-10, "{n} {r}: {z}");
        }
        let d = data(10, 0.8, 1.2);
        let peak = posterior_log_density(&d, 1.2);
        for dw in [-0.1, 0.05, 0.3] {
            assert!(posterior_log_density(&d, 1.2 + dw) < peak);
        }
        let flat = data(7, 0.0, 0.0);
        assert_relative_eq!(posterior_log_density(&flat, 0.4).exp(), 1.0 / TAU, epsilon = 1e-15);
    }

    #[test]
    fn bayes_plugin() {
        let d = CircleData::new(3, Vector2::new(2.0, 0.0)).unwrap();
        assert_eq!(bayes_plugin_mean(&d).unwrap(), Vector2::new(1.0, 0.0));
        let d = CircleData::new(3, Vector2::new(0.3, 0.4)).unwrap();
        assert_relative_eq!(bayes_plugin_mean(&d).unwrap(), Vector2::new(0.6, 0.8), epsilon = 1e-15);
        let z = CircleData::new(3, Vector2::zeros()).unwrap();
        assert!(matches!(bayes_plugin_mean(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn posterior_circular_mean_is_phi() {
        for phi in [0.3, 2.9, 5.5] {
            let d = data(8, 0.6, phi);
            let m: Vector2<f64> = posterior_expectation(&d, 4096, mean_on_circle);
            let circ = wrap_angle(m[1].atan2(m[0]));
            let diff = (circ - phi).abs();
            assert!(diff.min(TAU - diff) <= 1e-10);
        }
    }

    #[test]
    fn extended_plugin_matches_quadrature() {
        for n in [5, 20] {
            for r in [0.3, 1.0] {
                let d = data(n, r, 0.77);
                let quad: Vector2<f64> = posterior_expectation(&d, 4096, mean_on_circle);
                let closed = extended_plugin_mean(&d);
                assert!(!closed.degenerate);
                assert!((closed.mean - quad).abs().max() <= 1e-10);
                assert!(closed.mean.norm() < 1.0);
            }
        }
        let z = extended_plugin_mean(&data(4, 0.0, 0.0));
        assert!(z.degenerate);
        assert_eq!(z.mean, Vector2::zeros());
    }

    #[test]
    fn predictive_equals_posterior_mixture() {
        let d = data(6, 0.9, 0.4);
        for k in 0..20 {
            let a = k as f64 * 0.31;
            let y = Vector2::new(2.0 * a.cos() - 0.3, 1.5 * (1.7 * a).sin());
            let mix = posterior_expectation(&d, 4096, |w| gaussian_log_density(&y, &mean_on_circle(w), 1.0).exp());
            let closed = bayesian_predictive_log_density(&d, &y).exp();
            assert!((mix - closed).abs() <= 1e-8, "{mix} {closed}");
        }
    }

    #[test]
    fn predictive_normalises() {
        let d = data(5, 1.0, 0.0);
        let (xs, w) = trapezoid(-10.0, 10.0, 401);
        let mut total = 0.0;
        for (x, a) in xs.iter().zip(&w) {
            for (y, b) in xs.iter().zip(&w) {
                total += a * b * bayesian_predictive_log_density(&d, &Vector2::new(*x, *y)).exp();
            }
        }
        assert!((total - 1.0).abs() <= 1e-6, "{total}");
    }

    #[test]
    fn predictive_is_rotation_invariant_without_signal() {
        let d = CircleData::new(9, Vector2::zeros()).unwrap();
        let base = bayesian_predictive_log_density(&d, &Vector2::new(1.3, 0.0));
        for a in [0.4, 1.9, 4.0] {
            let y = Vector2::new(1.3 * f64::cos(a), 1.3 * f64::sin(a));
            assert_relative_eq!(bayesian_predictive_log_density(&d, &y), base, epsilon = 1e-13);
        }
    }

    #[test]
    fn predictive_is_not_unit_covariance_gaussian() {
        let d = data(5, 1.0, 0.0);
        let (xs, w) = trapezoid(-10.0, 10.0, 401);
        let mut m = Vector2::zeros();
        let mut s = nalgebra::Matrix2::zeros();
        for (x, a) in xs.iter().zip(&w) {
            for (y, b) in xs.iter().zip(&w) {
                let p = Vector2::new(*x, *y);
                let dens = a * b * bayesian_predictive_log_density(&d, &p).exp();
                m += p * dens;
                s += p * p.transpose() * dens;
            }
        }
        let cov = s - m * m.transpose();
        let dev = (cov - nalgebra::Matrix2::identity()).abs().max();
        assert!(dev > 10.0 * 1e-6, "{dev}");
    }

    #[test]
    fn plugin_divergences() {
        let om = 0.6;
        let mu = mean_on_circle(om);
        let truth = CirclePredictive::BayesPlugin { mean: mu, sigma2: 1.0 };
        assert_eq!(kl_true_vs_predictive(om, &truth), 0.0);
        let anti = CirclePredictive::ExtendedPlugin { mean: -mu, sigma2: 1.0 };
        assert_relative_eq!(kl_true_vs_predictive(om, &anti), 2.0, epsilon = 1e-14);
        let d = data(5, 0.8, 0.9);
        let b = kl_true_vs_predictive(om, &CirclePredictive::bayesian(&d));
        let e = kl_true_vs_predictive(om, &CirclePredictive::extended_plugin(&d));
        assert!(b.is_finite() && b >= 0.0 && e.is_finite() && e >= 0.0);
    }

    #[test]
    fn hermite_route_matches_tensor_quadrature() {
        let gh = default_kl_rule();
        for (n, r, phi, om, s2) in [
            (25, 0.9, 0.2, 0.0, 1.0),
            (5, 1.3, 3.0, 2.5, 1.0),
            (25, 1.1, 1.0, 1.2, 4.0),
            (2, 0.1, 0.0, 0.0, 1.0),
        ] {
            let d = CircleData::with_variance(n, Vector2::new(r * f64::cos(phi), r * f64::sin(phi)), s2).unwrap();
            let quad = kl_true_vs_predictive(om, &CirclePredictive::bayesian(&d));
            let fast = kl_bayesian_predictive_gh(om, &d, &gh);
            assert!((quad - fast).abs() <= 1e-9, "{quad} {fast}");
        }
    }
}
