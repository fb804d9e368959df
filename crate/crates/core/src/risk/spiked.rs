use std::hint::black_box;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_trials, RiskEstimate};
use crate::error::{Error, Result};
use crate::sampling::RngStream;
use crate::spiked::{
    covariance, gaussian_kl_zero_mean, mixture_kl_controlled, sample_posterior, sample_y, spiked_kl, FittedPredictives,
    McmcConfig, SpikedData, SpikedParam, SpikedPrior,
};

pub const SPIKED_PREDICTIVES: [&str; 3] = ["bayes_plugin", "extended_plugin", "mixture"];

const DATA_STREAM: u64 = 1;
const CHAIN_STREAM: u64 = 2;
const Y_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpikedTrialConfig {
    pub l: usize,
    pub n: usize,
    pub lambda_grid: Vec<f64>,
    pub trials: usize,
    /// Posterior draws kept per trial; `None` picks 1000 (2000 from l = 80).
    pub draws: Option<usize>,
    /// `None` picks 250 (500 from l = 80).
    pub burn_in: Option<usize>,
    pub log_lambda_step: f64,
    pub direction_step: Option<f64>,
    /// Tune proposal scales during burn-in.
    pub adapt: bool,
    /// y-samples per trial for the mixture divergence, shared by all predictives.
    pub y_samples: usize,
    pub seed: u64,
    pub prior: SpikedPrior,
    /// True spike direction; `None` means `e₁`.
    pub direction: Option<Vec<f64>>,
}

impl Default for SpikedTrialConfig {
    fn default() -> Self {
        Self {
            l: 5,
            n: 20,
            lambda_grid: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            trials: 200,
            draws: None,
            burn_in: None,
            log_lambda_step: 0.15,
            direction_step: None,
            adapt: true,
            y_samples: 1000,
            seed: 1,
            prior: SpikedPrior::default(),
            direction: None,
        }
    }
}

impl SpikedTrialConfig {
    pub fn validate(&self) -> Result<()> {
        check_trials(self.trials)?;
        if self.l < 2 || self.n < 2 || self.y_samples == 0 || self.draws == Some(0) {
            return Err(Error::Argument(
                "spiked risk needs l ≥ 2, n ≥ 2, draws ≥ 1 and y-samples ≥ 1".into(),
            ));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Argument("λ grid must be non-empty and positive".into()));
        }
        if let Some(d) = &self.direction {
            if d.len() != self.l {
                return Err(Error::Argument("direction length must equal l".into()));
            }
        }
        Ok(())
    }

    pub fn mcmc(&self, seed: u64, stream_id: u64) -> McmcConfig {
        let base = McmcConfig::for_dimension(self.l, seed);
        McmcConfig {
            n_draws: self.draws.unwrap_or(base.n_draws),
            burn_in: self.burn_in.unwrap_or(base.burn_in),
            log_lambda_step: self.log_lambda_step,
            direction_step: self.direction_step,
            adapt: self.adapt,
            seed,
            stream_id,
        }
    }

    pub fn truth(&self, lambda: f64) -> Result<SpikedParam> {
        let dir = match &self.direction {
            Some(d) => DVector::from_column_slice(d),
            None => DVector::from_fn(self.l, |i, _| if i == 0 { 1.0 } else { 0.0 }),
        };
        SpikedParam::from_direction(lambda, dir)
    }
}

struct TrialOutcome {
    losses: Vec<f64>,
    warnings: Vec<String>,
}

fn spiked_trial(cfg: &SpikedTrialConfig, truth: &SpikedParam, id: u64) -> Result<TrialOutcome> {
    let root = RngStream::new(cfg.seed, id);
    let data = SpikedData::generate(truth, cfg.n, &mut root.derive(DATA_STREAM))?;
    let posterior = sample_posterior(&cfg.prior, &data, &cfg.mcmc(root.derive(CHAIN_STREAM).key(), id))?;
    let fitted = FittedPredictives::from_draws(&posterior)?;
    let ys = sample_y(truth, cfg.y_samples, &mut root.derive(Y_STREAM));
    let plugin = spiked_kl(truth, &fitted.bayes_plugin);
    let extended = gaussian_kl_zero_mean(&covariance(truth), &fitted.extended_plugin.sigma)?;
    let (mixture, _) = mixture_kl_controlled(truth, &fitted, &ys)?;
    Ok(TrialOutcome {
        losses: vec![plugin, extended, mixture],
        warnings: fitted.warnings,
    })
}

/// Stream id of trial `k` at grid point `g`.
fn trial_id(g: usize, k: usize) -> u64 {
    ((g as u64) << 32) | k as u64
}

/// Paired KL risks of the Bayes plugin, the extended plugin and the mixture
/// at each λ of the grid. Plugin divergences are exact; the mixture uses the
/// extended plugin as a control variate over shared y-samples.
pub fn run_spiked_risk(cfg: &SpikedTrialConfig) -> Result<Vec<(f64, RiskEstimate)>> {
    cfg.validate()?;
    let mut out = Vec::with_capacity(cfg.lambda_grid.len());
    for (g, &lambda) in cfg.lambda_grid.iter().enumerate() {
        let truth = cfg.truth(lambda)?;
        let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
            .into_par_iter()
            .map(|k| spiked_trial(cfg, &truth, trial_id(g, k)))
            .collect::<Result<_>>()?;
        let losses: Vec<Vec<f64>> = outcomes.iter().map(|o| o.losses.clone()).collect();
        let mut est = RiskEstimate::from_losses(&SPIKED_PREDICTIVES, &losses, &[(0, 1), (1, 2), (0, 2)])?;
        let flagged: Vec<&TrialOutcome> = outcomes.iter().filter(|o| !o.warnings.is_empty()).collect();
        if !flagged.is_empty() {
            est.warnings.push(format!(
                "λ = {lambda}: {} of {} trials raised sampler warnings",
                flagged.len(),
                cfg.trials
            ));
            let mut seen: Vec<&String> = Vec::new();
            for w in flagged.iter().flat_map(|o| &o.warnings) {
                if seen.len() < 3 && !seen.contains(&w) {
                    seen.push(w);
                }
            }
            est.warnings.extend(seen.into_iter().map(|w| format!("  e.g. {w}")));
        }
        out.push((lambda, est));
    }
    Ok(out)
}

/// Evaluation cost of the fitted mixture and extended plugin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub l: usize,
    pub draws: usize,
    pub points: usize,
    pub mixture_seconds: f64,
    pub extended_seconds: f64,
    pub mixture_bytes: usize,
    pub extended_bytes: usize,
}

impl TimingReport {
    pub fn time_ratio(&self) -> f64 {
        self.mixture_seconds / self.extended_seconds
    }

    pub fn size_ratio(&self) -> f64 {
        self.mixture_bytes as f64 / self.extended_bytes as f64
    }
}

const TIMING_REPEATS: usize = 5;

fn time_points(points: &[DVector<f64>], f: impl Fn(&DVector<f64>) -> f64) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..TIMING_REPEATS {
        let start = Instant::now();
        let mut acc = 0.0;
        for y in points {
            acc += f(black_box(y));
        }
        black_box(acc);
        best = best.min(start.elapsed().as_secs_f64());
    }
    best.max(f64::MIN_POSITIVE)
}

/// Fits both predictives to data from `N(0, Σ(1, e₁))` with `n = 4l`, then
/// times one-at-a-time evaluation at `points` fresh points (best of five).
pub fn benchmark_eval(l: usize, draws: usize, points: usize, seed: u64) -> Result<TimingReport> {
    if l < 2 || draws == 0 || points == 0 {
        return Err(Error::Argument(
            "benchmark needs l ≥ 2, draws ≥ 1 and points ≥ 1".into(),
        ));
    }
    let cfg = SpikedTrialConfig {
        l,
        n: 4 * l,
        draws: Some(draws),
        burn_in: Some(draws / 4),
        seed,
        ..Default::default()
    };
    let truth = cfg.truth(1.0)?;
    let root = RngStream::new(seed, 0);
    let data = SpikedData::generate(&truth, cfg.n, &mut root.derive(DATA_STREAM))?;
    let posterior = sample_posterior(&cfg.prior, &data, &cfg.mcmc(root.derive(CHAIN_STREAM).key(), 0))?;
    let fitted = FittedPredictives::from_draws(&posterior)?;
    let mut ys = root.derive(Y_STREAM);
    let pts: Vec<DVector<f64>> = (0..points).map(|_| truth.sample(&mut ys)).collect();
    let mixture_seconds = time_points(&pts, |y| fitted.mixture.log_density(y));
    let extended_seconds = time_points(&pts, |y| fitted.extended_plugin.log_density(y));
    Ok(TimingReport {
        l,
        draws,
        points,
        mixture_seconds,
        extended_seconds,
        mixture_bytes: fitted.mixture.stored_bytes(),
        extended_bytes: fitted.extended_plugin.stored_bytes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SpikedTrialConfig {
        SpikedTrialConfig {
            l: 3,
            n: 15,
            lambda_grid: vec![1.0, 4.0],
            trials: 6,
            draws: Some(200),
            burn_in: Some(50),
            y_samples: 100,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let a = run_spiked_risk(&small()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let b = pool.install(|| run_spiked_risk(&small()).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        for (_, est) in &a {
            assert_eq!(est.trials, 6);
            assert!(est.risks[0].mean >= 0.0 && est.risks[1].mean >= 0.0);
        }
    }

    #[test]
    fn validation() {
        assert!(run_spiked_risk(&SpikedTrialConfig { trials: 0, ..small() }).is_err());
        assert!(run_spiked_risk(&SpikedTrialConfig {
            lambda_grid: vec![],
            ..small()
        })
        .is_err());
        assert!(run_spiked_risk(&SpikedTrialConfig {
            direction: Some(vec![1.0]),
            ..small()
        })
        .is_err());
    }

    #[test]
    fn defaults_follow_dimension() {
        let c = SpikedTrialConfig::default();
        assert_eq!(c.mcmc(0, 0).n_draws, 1000);
        assert_eq!(c.mcmc(0, 0).burn_in, 250);
        let c = SpikedTrialConfig { l: 80, ..c };
        assert_eq!((c.mcmc(0, 0).n_draws, c.mcmc(0, 0).burn_in), (2000, 500));
    }

    #[test]
    fn single_draw_benchmark_is_balanced() {
        let rep = benchmark_eval(5, 1, 2000, 3).unwrap();
        assert!(rep.mixture_seconds > 0.0 && rep.extended_seconds > 0.0);
        assert!(
            rep.time_ratio() > 0.1 && rep.time_ratio() < 10.0,
            "{}",
            rep.time_ratio()
        );
        assert!(rep.mixture_bytes > 0 && rep.extended_bytes > 0);
    }
}
