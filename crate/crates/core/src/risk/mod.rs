//! Paired Monte Carlo estimation of Kullback–Leibler risk, plus the
//! deterministic checks that go with it (expansion orders, Bayes-risk
//! optimality, evaluation cost).
//!
//! Trials are independent given their random streams: trial `k` of a run with
//! master seed `s` draws everything from `RngStream::new(s, k)` and children
//! derived from it. Per-trial losses are collected by index and reduced in
//! trial order, so estimates do not depend on the thread count.

mod circle;
mod spiked;

pub use circle::{
    bayes_risk_optimality_check, run_circle_risk, verify_expansions, CircleTrialConfig, ExpansionRow, OptimalityReport,
    CIRCLE_PREDICTIVES,
};
pub use spiked::{benchmark_eval, run_spiked_risk, SpikedTrialConfig, TimingReport, SPIKED_PREDICTIVES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Configuration of one risk experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TrialConfig {
    Circle(CircleTrialConfig),
    Spiked(SpikedTrialConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveRisk {
    pub predictive: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean of `risk(minuend) − risk(subtrahend)` over paired trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub minuend: String,
    pub subtrahend: String,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub trials: usize,
    pub risks: Vec<PredictiveRisk>,
    pub diffs: Vec<PairedDiff>,
    /// Trials whose data had to be redrawn (circle: `x̄ = 0`).
    pub resampled: usize,
    pub warnings: Vec<String>,
}

impl RiskEstimate {
    /// Aggregates per-trial losses; `losses[k][j]` is the loss of predictive
    /// `j` in trial `k`.
    pub fn from_losses(names: &[&str], losses: &[Vec<f64>], pairs: &[(usize, usize)]) -> Result<Self> {
        if losses.is_empty() {
            return Err(Error::Argument("no trials".into()));
        }
        if losses.iter().any(|row| row.len() != names.len()) {
            return Err(Error::Argument("loss rows do not match the predictive list".into()));
        }
        let column = |j: usize| losses.iter().map(|row| row[j]).collect::<Vec<_>>();
        let risks = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let (mean, stderr) = mean_stderr(&column(j));
                PredictiveRisk {
                    predictive: name.to_string(),
                    mean,
                    stderr,
                }
            })
            .collect();
        let diffs = pairs
            .iter()
            .map(|&(a, b)| {
                let d: Vec<f64> = losses.iter().map(|row| row[a] - row[b]).collect();
                let (mean, stderr) = mean_stderr(&d);
                PairedDiff {
                    minuend: names[a].to_string(),
                    subtrahend: names[b].to_string(),
                    mean,
                    stderr,
                }
            })
            .collect();
        Ok(Self {
            trials: losses.len(),
            risks,
            diffs,
            resampled: 0,
            warnings: Vec::new(),
        })
    }

    pub fn risk(&self, predictive: &str) -> Option<&PredictiveRisk> {
        self.risks.iter().find(|r| r.predictive == predictive)
    }

    pub fn diff(&self, minuend: &str, subtrahend: &str) -> Option<&PairedDiff> {
        self.diffs
            .iter()
            .find(|d| d.minuend == minuend && d.subtrahend == subtrahend)
    }
}

/// Sample mean and its standard error (`s/√n`, zero for a single value).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    crate::spiked::mean_stderr(xs)
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Argument("trial count must be at least 1".into()));
    }
    Ok(())
}
