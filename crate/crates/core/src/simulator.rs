//! Pluggable simulators. The built-in registry holds the closed-form
//! stress surrogate used by the Copenhagen path experiments plus two
//! analytic oracles whose vulnerable regions are known exactly, for
//! exercising the discovery algorithms against ground truth.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::sampling::SampleMatrix;

pub const STRESS_SURROGATE_ID: &str = "stress_surrogate";
pub const ORACLE_BOX_ID: &str = "oracle_box";
pub const ORACLE_RING_ID: &str = "oracle_ring";

pub const SIMULATOR_IDS: [&str; 3] = [STRESS_SURROGATE_ID, ORACLE_BOX_ID, ORACLE_RING_ID];

pub fn is_registered(id: &str) -> bool {
    SIMULATOR_IDS.contains(&id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorSpec {
    pub id: String,
    pub input_dims: Vec<String>,
    pub output_name: String,
    pub deterministic: bool,
}

/// The binding of a registered simulator to an experiment's space.
pub fn simulator_spec(cfg: &ExperimentConfig) -> Result<SimulatorSpec> {
    if !is_registered(&cfg.simulator_id) {
        return Err(Error::UnknownSimulator(cfg.simulator_id.clone()));
    }
    Ok(SimulatorSpec {
        id: cfg.simulator_id.clone(),
        input_dims: cfg.space.dims.iter().map(|d| d.name.clone()).collect(),
        output_name: "delta_stress".into(),
        deterministic: true,
    })
}

/// Environmental feature shares of a path. The four parts always sum to
/// 100; `filler` stands for every non-modeled segmentation class (road,
/// sky, vehicles) and is inert in the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathProfile {
    pub vegetation: f64,
    pub building: f64,
    pub person: f64,
    pub filler: f64,
}

impl PathProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vegetation", self.vegetation),
            ("building", self.building),
            ("person", self.person),
            ("filler", self.filler),
        ] {
            if !(v >= 0.0) {
                return Err(Error::NegativeFeature { name, value: v });
            }
        }
        let sum = self.vegetation + self.building + self.person + self.filler;
        if (sum - 100.0).abs() > 1e-9 {
            return Err(Error::InvalidExperiment(format!(
                "profile parts sum to {sum}, expected 100"
            )));
        }
        Ok(())
    }
}

/// Rebalances four feature percentages to sum to exactly 100: when the
/// parts fall short, filler absorbs the slack; when they exceed 100, all
/// four are scaled down proportionally.
pub fn normalize_features(
    vegetation: f64,
    building: f64,
    person: f64,
    filler: f64,
) -> Result<PathProfile> {
    for (name, v) in [
        ("vegetation", vegetation),
        ("building", building),
        ("person", person),
        ("filler", filler),
    ] {
        if !(v >= 0.0) {
            return Err(Error::NegativeFeature { name, value: v });
        }
    }
    let sum = vegetation + building + person + filler;
    if sum <= 100.0 {
        Ok(PathProfile {
            vegetation,
            building,
            person,
            filler: filler + (100.0 - sum),
        })
    } else {
        let scale = 100.0 / sum;
        Ok(PathProfile {
            vegetation: vegetation * scale,
            building: building * scale,
            person: person * scale,
            filler: filler * scale,
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn check_range(name: &'static str, value: f64, low: f64, high: f64) -> Result<()> {
    if value >= low && value <= high {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            low,
            high,
        })
    }
}

/// Closed-form stand-in for the learned stress model. Buildings and people
/// raise stress everywhere; vegetation lowers it, but high extraversion
/// attenuates the benefit; a small building-and-extraversion-gated ripple
/// makes the vegetation response non-monotone in exactly that corner.
pub fn stress_surrogate(
    vegetation: f64,
    building: f64,
    person: f64,
    extraversion: f64,
) -> Result<f64> {
    check_range("vegetation", vegetation, 0.0, 100.0)?;
    check_range("building", building, 0.0, 100.0)?;
    check_range("person", person, 0.0, 100.0)?;
    check_range("extraversion", extraversion, 1.0, 5.0)?;
    let v = vegetation;
    let b = building;
    let p = person;
    let e = extraversion;
    Ok(2.0 * logistic((b - 30.0) / 12.0) + 1.5 * logistic((p - 12.0) / 6.0)
        - 1.8 * logistic((v - 18.0) / 10.0) * (1.0 - 0.5 * logistic((e - 3.8) / 0.15))
        + 0.35 * logistic((b - 40.0) / 10.0) * logistic((e - 3.6) / 0.2) * (0.45 * v).sin())
}

/// Simulator response for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub stress_baseline: f64,
    pub stress_policy: f64,
    pub delta: f64,
}

/// Evaluates the stress surrogate for one uncertainty point, without and
/// with the policy lever applied.
///
/// The point's building, person, and extraversion coordinates override the
/// profile; the profile contributes the path's vegetation share, and
/// filler is recomputed as slack each time so the four parts stay a valid
/// composition. The lever adds to vegetation before normalization.
pub fn run_scenario(
    cfg: &ExperimentConfig,
    point: &[f64],
    profile: &PathProfile,
) -> Result<ScenarioOutcome> {
    if cfg.simulator_id != STRESS_SURROGATE_ID {
        return Err(Error::SimulatorMismatch {
            expected: STRESS_SURROGATE_ID,
            got: cfg.simulator_id.clone(),
        });
    }
    check_point(cfg, point)?;
    stress_outcome(cfg, point, profile, cfg.lever.delta)
}

fn stress_outcome(
    cfg: &ExperimentConfig,
    point: &[f64],
    profile: &PathProfile,
    lever_delta: f64,
) -> Result<ScenarioOutcome> {
    let need = |name: &str| {
        cfg.space.dim_index(name).ok_or_else(|| {
            Error::InvalidExperiment(format!("space has no dimension named `{name}`"))
        })
    };
    let building = point[need("building")?];
    let person = point[need("person")?];
    let extraversion = point[need("extraversion")?];

    let base = normalize_features(profile.vegetation, building, person, 0.0)?;
    let stress_baseline =
        stress_surrogate(base.vegetation, base.building, base.person, extraversion)?;
    let pol = normalize_features(profile.vegetation + lever_delta, building, person, 0.0)?;
    let stress_policy = stress_surrogate(pol.vegetation, pol.building, pol.person, extraversion)?;
    Ok(ScenarioOutcome {
        stress_baseline,
        stress_policy,
        delta: stress_policy - stress_baseline,
    })
}

/// Ground-truth oracle: vulnerable iff the (unit-cube) point lies in
/// [0.2, 0.5] x [0.6, 0.9] on its first two coordinates.
pub fn oracle_box(unit_point: &[f64]) -> Result<bool> {
    if unit_point.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: unit_point.len(),
        });
    }
    let (x1, x2) = (unit_point[0], unit_point[1]);
    Ok((0.2..=0.5).contains(&x1) && (0.6..=0.9).contains(&x2))
}

/// Ground-truth oracle: vulnerable iff the point lies in a spherical shell
/// of radii [0.25, 0.45] around the cube center. Not representable by one
/// axis-aligned box, which exercises covering and multi-leaf trees.
pub fn oracle_ring(unit_point: &[f64]) -> Result<bool> {
    if unit_point.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: 0,
        });
    }
    let r2: f64 = unit_point.iter().map(|x| (x - 0.5) * (x - 0.5)).sum();
    let r = r2.sqrt();
    Ok((0.25..=0.45).contains(&r))
}

/// Evaluates the experiment's simulator at one point with an explicit
/// lever value. Oracle outcomes are mapped onto the stress scale so the
/// delta_nonneg rule reproduces the oracle label: vulnerable scenarios get
/// delta +1, the rest -1.
pub fn evaluate_point(
    cfg: &ExperimentConfig,
    point: &[f64],
    lever_delta: f64,
) -> Result<ScenarioOutcome> {
    check_point(cfg, point)?;
    match cfg.simulator_id.as_str() {
        STRESS_SURROGATE_ID => {
            let profile = cfg.profile.as_ref().ok_or_else(|| {
                Error::InvalidExperiment("stress_surrogate requires a profile".into())
            })?;
            stress_outcome(cfg, point, profile, lever_delta)
        }
        ORACLE_BOX_ID => Ok(oracle_outcome(oracle_box(&to_unit(cfg, point))?)),
        ORACLE_RING_ID => Ok(oracle_outcome(oracle_ring(&to_unit(cfg, point))?)),
        other => Err(Error::UnknownSimulator(other.to_string())),
    }
}

/// Batch evaluation under the experiment's own lever; output order matches
/// input order.
pub fn evaluate_matrix(cfg: &ExperimentConfig, m: &SampleMatrix) -> Result<Vec<ScenarioOutcome>> {
    m.points
        .iter()
        .map(|p| evaluate_point(cfg, p, cfg.lever.delta))
        .collect()
}

fn oracle_outcome(vulnerable: bool) -> ScenarioOutcome {
    let delta = if vulnerable { 1.0 } else { -1.0 };
    ScenarioOutcome {
        stress_baseline: 0.0,
        stress_policy: delta,
        delta,
    }
}

fn to_unit(cfg: &ExperimentConfig, point: &[f64]) -> Vec<f64> {
    cfg.space
        .dims
        .iter()
        .zip(point)
        .map(|(d, &x)| (x - d.low) / (d.high - d.low))
        .collect()
}

fn check_point(cfg: &ExperimentConfig, point: &[f64]) -> Result<()> {
    if point.len() != cfg.space.k() {
        return Err(Error::DimensionMismatch {
            expected: cfg.space.k(),
            got: point.len(),
        });
    }
    for (d, &x) in cfg.space.dims.iter().zip(point) {
        if x < d.low || x > d.high {
            return Err(Error::InvalidConfig(format!(
                "point coordinate `{}` = {} outside [{}, {}]",
                d.name, x, d.low, d.high
            )));
        }
    }
    Ok(())
}

/// Writes points plus outcomes as CSV: dimension-name columns followed by
/// `stress_baseline, stress_policy, delta, vulnerable` (vulnerable as 0/1).
pub fn write_labeled_csv(
    cfg: &ExperimentConfig,
    m: &SampleMatrix,
    outcomes: &[ScenarioOutcome],
    writer: impl Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = cfg.space.dims.iter().map(|d| d.name.clone()).collect();
    header.extend(
        ["stress_baseline", "stress_policy", "delta", "vulnerable"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for (point, outcome) in m.points.iter().zip(outcomes) {
        let mut row: Vec<String> = point.iter().map(|v| v.to_string()).collect();
        row.push(outcome.stress_baseline.to_string());
        row.push(outcome.stress_policy.to_string());
        row.push(outcome.delta.to_string());
        row.push(if cfg.rule.label(outcome.delta) { "1" } else { "0" }.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The labeled-CSV contents, as written by [`write_labeled_csv`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCsv {
    pub dim_names: Vec<String>,
    pub points: Vec<Vec<f64>>,
    pub outcomes: Vec<ScenarioOutcome>,
    pub vulnerable: Vec<bool>,
}

pub fn read_labeled_csv(reader: impl Read) -> Result<LabeledCsv> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let tail = ["stress_baseline", "stress_policy", "delta", "vulnerable"];
    if header.len() < 5 || header[header.len() - 4..] != tail {
        return Err(Error::InvalidConfig(
            "csv is not a labeled scenario file".into(),
        ));
    }
    let k = header.len() - 4;
    let mut out = LabeledCsv {
        dim_names: header[..k].to_vec(),
        points: Vec::new(),
        outcomes: Vec::new(),
        vulnerable: Vec::new(),
    };
    for record in r.records() {
        let record = record?;
        let fields = record
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad float `{f}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if fields.len() != header.len() {
            return Err(Error::DimensionMismatch {
                expected: header.len(),
                got: fields.len(),
            });
        }
        out.points.push(fields[..k].to_vec());
        out.outcomes.push(ScenarioOutcome {
            stress_baseline: fields[k],
            stress_policy: fields[k + 1],
            delta: fields[k + 2],
        });
        out.vulnerable.push(fields[k + 3] != 0.0);
    }
    Ok(out)
}
