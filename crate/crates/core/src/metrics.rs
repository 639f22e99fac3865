//! Regression diagnostics and the policy lever sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::sampling;
use crate::simulator;

pub const DEFAULT_SWEEP_CUTOFF: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    /// NaN (serialized as null) when the actuals are constant.
    pub r_squared: f64,
    pub mse: f64,
    pub mae: f64,
    pub n: usize,
    /// True when the actuals have zero variance and `r_squared` is
    /// undefined.
    pub degenerate: bool,
}

pub fn r_squared(actual: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    let n = actual.len();
    if n < 2 {
        return Err(Error::TooFewSamples { min: 2, got: n });
    }
    let mean = actual.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    let abs_err: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).abs())
        .sum();
    let degenerate = ss_tot == 0.0;
    Ok(RegressionMetrics {
        r_squared: if degenerate { f64::NAN } else { 1.0 - ss_res / ss_tot },
        mse: ss_res / n as f64,
        mae: abs_err / n as f64,
        n,
        degenerate,
    })
}

/// Pearson correlation; a constant input on either side makes the
/// coefficient undefined and reports `(0.0, true)`.
pub fn pearson(x: &[f64], y: &[f64]) -> (f64, bool) {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n == 0 {
        return (0.0, true);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return (0.0, true);
    }
    (sxy / (sxx * syy).sqrt(), false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub low: f64,
    pub high: f64,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over `[low, high]`; the top edge is inclusive.
/// A zero-width range puts everything in the first bin.
pub fn histogram(values: &[f64], low: f64, high: f64, bins: usize) -> Histogram {
    let mut counts = vec![0usize; bins.max(1)];
    let width = high - low;
    for &v in values {
        let bin = if width > 0.0 {
            (((v - low) / width * counts.len() as f64) as usize).min(counts.len() - 1)
        } else {
            0
        };
        counts[bin] += 1;
    }
    Histogram { low, high, counts }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Lever settings in the order given.
    pub deltas: Vec<f64>,
    /// Vulnerable-scenario count per lever setting, same order.
    pub vulnerable_counts: Vec<usize>,
    pub n_scenarios: usize,
    pub cutoff: usize,
    /// Smallest lever setting whose count is at or below the cutoff.
    pub threshold: Option<f64>,
    /// A zero lever makes delta identically zero under the nonnegative
    /// rule, so every scenario counts as vulnerable.
    pub zero_lever_warning: bool,
}

/// Evaluates the experiment over one shared LHS scenario set at each lever
/// setting and counts vulnerable scenarios.
pub fn policy_sweep(
    cfg: &ExperimentConfig,
    deltas: &[f64],
    n_scenarios: usize,
    seed_value: u64,
    cutoff: usize,
) -> Result<SweepResult> {
    if deltas.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one lever setting".into()));
    }
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidConfig("lever settings must be >= 0".into()));
    }
    if n_scenarios == 0 {
        return Err(Error::InvalidConfig("sweep needs at least one scenario".into()));
    }
    let scenarios = sampling::lhs(&cfg.space, n_scenarios, seed_value);
    let mut vulnerable_counts = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut count = 0usize;
        for p in &scenarios.points {
            let outcome = simulator::evaluate_point(cfg, p, delta)?;
            if cfg.rule.label(outcome.delta) {
                count += 1;
            }
        }
        vulnerable_counts.push(count);
    }
    let threshold = deltas
        .iter()
        .zip(&vulnerable_counts)
        .filter(|(_, &c)| c <= cutoff)
        .map(|(&d, _)| d)
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a: f64| a.min(d)))
        });
    Ok(SweepResult {
        deltas: deltas.to_vec(),
        vulnerable_counts,
        n_scenarios,
        cutoff,
        threshold,
        zero_lever_warning: deltas.contains(&0.0),
    })
}

/// Two-column CSV (`delta,vulnerable_count`), rows in sweep order.
pub fn write_sweep_csv(result: &SweepResult, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["delta", "vulnerable_count"])?;
    for (d, c) in result.deltas.iter().zip(&result.vulnerable_counts) {
        w.write_record([d.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
