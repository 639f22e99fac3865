//! Declarative experiment definition: uncertainty space, policy lever,
//! simulator binding, vulnerability rule, and seeds. An experiment file is
//! a single JSON document consumed unchanged by the CLI and the service.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{self, PathProfile};

/// One uncertain input, with absolute bounds in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyDim {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySpace {
    pub dims: Vec<UncertaintyDim>,
}

impl UncertaintySpace {
    /// Convenience constructor for the unit cube, used heavily by tests
    /// and the analytic oracles.
    pub fn unit_cube(k: usize) -> Self {
        let dims = (0..k)
            .map(|i| UncertaintyDim {
                name: format!("x{}", i + 1),
                low: 0.0,
                high: 1.0,
                baseline: 0.5,
            })
            .collect();
        UncertaintySpace { dims }
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.dims.iter().map(|d| (d.low, d.high)).collect()
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.k()
            && self
                .dims
                .iter()
                .zip(point)
                .all(|(d, &x)| x >= d.low && x <= d.high)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::InvalidExperiment(
                "space must have at least one dimension".into(),
            ));
        }
        for d in &self.dims {
            if !(d.low < d.high) {
                return Err(Error::InvalidExperiment(format!(
                    "dimension `{}`: low {} must be < high {}",
                    d.name, d.low, d.high
                )));
            }
            if d.baseline < d.low || d.baseline > d.high {
                return Err(Error::InvalidExperiment(format!(
                    "dimension `{}`: baseline {} outside [{}, {}]",
                    d.name, d.baseline, d.low, d.high
                )));
            }
        }
        for (i, d) in self.dims.iter().enumerate() {
            if self.dims[..i].iter().any(|e| e.name == d.name) {
                return Err(Error::InvalidExperiment(format!(
                    "duplicate dimension name `{}`",
                    d.name
                )));
            }
        }
        Ok(())
    }
}

/// The policy under test: add `delta` percentage points of vegetation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLever {
    pub name: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparator {
    /// Vulnerable iff stress_policy - stress_baseline >= 0.
    DeltaNonneg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRule {
    pub comparator: Comparator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl VulnerabilityRule {
    pub fn label(&self, delta: f64) -> bool {
        match self.comparator {
            Comparator::DeltaNonneg => delta >= 0.0,
        }
    }
}

/// The full XLRM quadruple plus run parameters. `profile` carries the
/// path's environmental feature percentages and is required by the stress
/// surrogate; the analytic oracles ignore it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub space: UncertaintySpace,
    pub lever: PolicyLever,
    pub simulator_id: String,
    pub rule: VulnerabilityRule,
    pub seed: u64,
    pub n_scenarios: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathProfile>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.lever.delta < 0.0 {
            return Err(Error::InvalidExperiment(format!(
                "lever delta {} must be >= 0",
                self.lever.delta
            )));
        }
        if self.n_scenarios == 0 {
            return Err(Error::InvalidExperiment("n_scenarios must be >= 1".into()));
        }
        if !simulator::is_registered(&self.simulator_id) {
            return Err(Error::UnknownSimulator(self.simulator_id.clone()));
        }
        if let Some(profile) = &self.profile {
            profile.validate()?;
        }
        if self.simulator_id == simulator::STRESS_SURROGATE_ID {
            if self.profile.is_none() {
                return Err(Error::InvalidExperiment(
                    "stress_surrogate requires a `profile` with path feature percentages".into(),
                ));
            }
            for required in ["building", "person", "extraversion"] {
                if self.space.dim_index(required).is_none() {
                    return Err(Error::InvalidExperiment(format!(
                        "stress_surrogate requires a dimension named `{required}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn load_experiment(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_experiment(&text)
}

pub fn parse_experiment(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}

/// The vector of per-dimension baselines, the center of the scenario cloud.
pub fn baseline_point(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.space.dims.iter().map(|d| d.baseline).collect()
}
