//! Patient rule induction: peel an axis-aligned box toward high vulnerable
//! density, pick a step on the coverage/density trade-off curve, and cover
//! the vulnerable set with several boxes fitted on residual data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{UncertaintySpace, VulnerabilityRule};
use crate::sampling::SampleMatrix;
use crate::simulator::ScenarioOutcome;

/// Axis-aligned hyper-rectangle restricting a subset of dimensions.
/// `limits[d]` is `Some((low, high))` when dimension d is restricted;
/// membership is closed on both bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBox {
    pub limits: Vec<Option<(f64, f64)>>,
}

impl ScenarioBox {
    /// The unrestricted box over k dimensions.
    pub fn full(k: usize) -> Self {
        ScenarioBox {
            limits: vec![None; k],
        }
    }

    pub fn k(&self) -> usize {
        self.limits.len()
    }

    pub fn restricted_dims(&self) -> Vec<usize> {
        self.limits
            .iter()
            .enumerate()
            .filter_map(|(d, l)| l.map(|_| d))
            .collect()
    }

    pub fn interpretability(&self) -> usize {
        self.limits.iter().filter(|l| l.is_some()).count()
    }

    pub fn is_unrestricted(&self) -> bool {
        self.limits.iter().all(|l| l.is_none())
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        debug_assert_eq!(point.len(), self.k());
        self.limits.iter().zip(point).all(|(lim, &x)| match lim {
            Some((lo, hi)) => x >= *lo && x <= *hi,
            None => true,
        })
    }
}

/// The dataset D: points, simulator outputs (delta stress), and
/// vulnerability labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSamples {
    pub points: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabeledSamples {
    pub fn new(points: Vec<Vec<f64>>, outputs: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if points.len() != outputs.len() || points.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                got: outputs.len().max(labels.len()),
            });
        }
        Ok(LabeledSamples {
            points,
            outputs,
            labels,
        })
    }

    /// Labels every outcome with the experiment's vulnerability rule.
    pub fn from_outcomes(
        m: &SampleMatrix,
        outcomes: &[ScenarioOutcome],
        rule: &VulnerabilityRule,
    ) -> Self {
        let outputs: Vec<f64> = outcomes.iter().map(|o| o.delta).collect();
        let labels = outputs.iter().map(|&d| rule.label(d)).collect();
        LabeledSamples {
            points: m.points.clone(),
            outputs,
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn k(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    pub fn n_vulnerable(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSamples {
        LabeledSamples {
            points: indices.iter().map(|&i| self.points[i].clone()).collect(),
            outputs: indices.iter().map(|&i| self.outputs[i]).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// CSV with one row per scenario: the dimension columns, then `delta`
    /// and `vulnerable`.
    pub fn to_csv(&self, space: &UncertaintySpace, writer: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = space.dims.iter().map(|d| d.name.as_str()).collect();
        header.push("delta");
        header.push("vulnerable");
        w.write_record(&header)?;
        for ((point, delta), label) in self.points.iter().zip(&self.outputs).zip(&self.labels) {
            let mut row: Vec<String> = point.iter().map(f64::to_string).collect();
            row.push(delta.to_string());
            row.push(label.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(space: &UncertaintySpace, reader: impl std::io::Read) -> Result<LabeledSamples> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut names: Vec<String> = space.dims.iter().map(|d| d.name.clone()).collect();
        names.push("delta".into());
        names.push("vulnerable".into());
        if header != names {
            return Err(Error::InvalidConfig(format!(
                "csv header {header:?} does not match {names:?}"
            )));
        }
        let k = space.k();
        let mut samples = LabeledSamples {
            points: Vec::new(),
            outputs: Vec::new(),
            labels: Vec::new(),
        };
        for record in r.records() {
            let record = record?;
            if record.len() != k + 2 {
                return Err(Error::DimensionMismatch {
                    expected: k + 2,
                    got: record.len(),
                });
            }
            let float = |f: &str| {
                f.parse::<f64>()
                    .map_err(|e| Error::InvalidConfig(format!("bad float `{f}`: {e}")))
            };
            let point = record.iter().take(k).map(float).collect::<Result<Vec<f64>>>()?;
            let delta = float(&record[k])?;
            let label = record[k + 1]
                .parse::<bool>()
                .map_err(|e| Error::InvalidConfig(format!("bad label `{}`: {e}", &record[k + 1])))?;
            samples.points.push(point);
            samples.outputs.push(delta);
            samples.labels.push(label);
        }
        Ok(samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    /// Share of all vulnerable points captured by the box.
    pub coverage: f64,
    /// Share of in-box points that are vulnerable.
    pub density: f64,
    /// Share of all points inside the box (the peeling stop quantity).
    pub support: f64,
    /// Vulnerable-inside share of all points. Support is sometimes defined
    /// this way instead of as in-box mass; reported as a diagnostic.
    pub vulnerable_mass: f64,
    /// Number of restricted dimensions.
    pub interpretability: usize,
    pub n_inside: usize,
    pub n_vulnerable_inside: usize,
}

pub fn box_stats(b: &ScenarioBox, data: &LabeledSamples) -> BoxStats {
    let n_total = data.len();
    let total_vulnerable = data.n_vulnerable();
    let mut n_inside = 0usize;
    let mut n_vulnerable_inside = 0usize;
    for (point, &label) in data.points.iter().zip(&data.labels) {
        if b.contains(point) {
            n_inside += 1;
            if label {
                n_vulnerable_inside += 1;
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    BoxStats {
        coverage: ratio(n_vulnerable_inside, total_vulnerable),
        density: ratio(n_vulnerable_inside, n_inside),
        support: ratio(n_inside, n_total),
        vulnerable_mass: ratio(n_vulnerable_inside, n_total),
        interpretability: b.interpretability(),
        n_inside,
        n_vulnerable_inside,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrimConfig {
    /// Fraction of in-box points removed per peel step, in (0, 0.5).
    pub patience: f64,
    /// Peeling stops once in-box mass falls below this share of all points.
    pub support_threshold: f64,
    /// Minimum mean-label improvement a peel must deliver to be adopted.
    pub min_mean_gain: f64,
    /// Auto-selection considers only steps with at least this coverage.
    pub coverage_floor: f64,
}

impl Default for PrimConfig {
    fn default() -> Self {
        PrimConfig {
            patience: 0.05,
            support_threshold: 0.05,
            min_mean_gain: 0.0,
            coverage_floor: 0.6,
        }
    }
}

impl PrimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.patience > 0.0 && self.patience < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "patience {} must be in (0, 0.5)",
                self.patience
            )));
        }
        if !(self.support_threshold > 0.0 && self.support_threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "support_threshold {} must be in (0, 1)",
                self.support_threshold
            )));
        }
        if !(self.min_mean_gain >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_mean_gain {} must be >= 0",
                self.min_mean_gain
            )));
        }
        if !(0.0..=1.0).contains(&self.coverage_floor) {
            return Err(Error::InvalidConfig(format!(
                "coverage_floor {} must be in [0, 1]",
                self.coverage_floor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    #[serde(flatten)]
    pub scenario_box: ScenarioBox,
    #[serde(flatten)]
    pub stats: BoxStats,
    pub peeled_dim: Option<usize>,
    pub peeled_side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeelingTrajectory {
    pub steps: Vec<TrajectoryStep>,
    pub selected_index: Option<usize>,
}

/// Iterative peeling. At each step, for every dimension and side, the
/// candidate box drops the patience-quantile slice of in-box points from
/// that side; the candidate with the highest remaining mean label wins
/// (ties: smaller dimension, low before high) and is adopted only if it
/// improves the mean. Stops when in-box support falls below the threshold,
/// no candidate improves, or further peeling would empty the box.
pub fn peel(
    data: &LabeledSamples,
    cfg: &PrimConfig,
    space: &UncertaintySpace,
    start: &ScenarioBox,
) -> Result<PeelingTrajectory> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = space.k();
    if data.k() != k || start.k() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: data.k().max(start.k()),
        });
    }

    let mut inside: Vec<usize> = (0..data.len())
        .filter(|&i| start.contains(&data.points[i]))
        .collect();
    if inside.is_empty() {
        return Err(Error::EmptyBox);
    }

    let n_total = data.len() as f64;
    let mut current = start.clone();
    let mut steps = vec![TrajectoryStep {
        scenario_box: current.clone(),
        stats: box_stats(&current, data),
        peeled_dim: None,
        peeled_side: None,
    }];

    loop {
        let n_in = inside.len();
        if (n_in as f64) / n_total < cfg.support_threshold {
            break;
        }
        let m = (cfg.patience * n_in as f64).ceil() as usize;
        if m >= n_in {
            break; // any further peel would empty the box
        }
        let current_mean = mean_label(data, &inside);

        // (mean, dim, side, new bound); first strict maximum wins the tie.
        let mut best: Option<(f64, usize, Side, f64)> = None;
        for d in 0..k {
            let mut vals: Vec<f64> = inside.iter().map(|&i| data.points[i][d]).collect();
            vals.sort_by(f64::total_cmp);

            // Low side: the new bound is the m-th order statistic, the
            // first kept value. Ties at the bound stay inside, so between
            // 1 and m points are removed; 0 removed means no progress.
            let low_bound = vals[m];
            let removed = vals.partition_point(|&x| x < low_bound);
            if removed > 0 {
                let mean = side_mean(data, &inside, d, low_bound, Side::Low);
                if best.is_none() || mean > best.unwrap().0 {
                    best = Some((mean, d, Side::Low, low_bound));
                }
            }

            let high_bound = vals[n_in - 1 - m];
            let removed = n_in - vals.partition_point(|&x| x <= high_bound);
            if removed > 0 {
                let mean = side_mean(data, &inside, d, high_bound, Side::High);
                if best.is_none() || mean > best.unwrap().0 {
                    best = Some((mean, d, Side::High, high_bound));
                }
            }
        }

        let Some((best_mean, d, side, bound)) = best else {
            break; // every candidate was a no-op
        };
        let gain = best_mean - current_mean;
        if !(gain > 0.0 && gain >= cfg.min_mean_gain) {
            break;
        }

        let (lo, hi) = current.limits[d].unwrap_or((space.dims[d].low, space.dims[d].high));
        current.limits[d] = Some(match side {
            Side::Low => (bound, hi),
            Side::High => (lo, bound),
        });
        inside.retain(|&i| {
            let x = data.points[i][d];
            match side {
                Side::Low => x >= bound,
                Side::High => x <= bound,
            }
        });
        steps.push(TrajectoryStep {
            scenario_box: current.clone(),
            stats: box_stats(&current, data),
            peeled_dim: Some(d),
            peeled_side: Some(side),
        });
    }

    Ok(PeelingTrajectory {
        steps,
        selected_index: None,
    })
}

fn mean_label(data: &LabeledSamples, inside: &[usize]) -> f64 {
    let vulnerable = inside.iter().filter(|&&i| data.labels[i]).count();
    vulnerable as f64 / inside.len() as f64
}

fn side_mean(data: &LabeledSamples, inside: &[usize], d: usize, bound: f64, side: Side) -> f64 {
    let mut kept = 0usize;
    let mut vulnerable = 0usize;
    for &i in inside {
        let x = data.points[i][d];
        let keep = match side {
            Side::Low => x >= bound,
            Side::High => x <= bound,
        };
        if keep {
            kept += 1;
            if data.labels[i] {
                vulnerable += 1;
            }
        }
    }
    vulnerable as f64 / kept as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum SelectCriterion {
    Auto,
    Index(usize),
}

/// Picks a trajectory step. `Auto`: among steps with coverage at or above
/// the floor, the densest one (ties: fewer restricted dims, then earlier
/// step); if no step meets the floor, the step maximizing coverage times
/// density. `Index`: that step verbatim, the interactive path.
pub fn select_box(
    traj: &PeelingTrajectory,
    criterion: SelectCriterion,
    coverage_floor: f64,
) -> Result<usize> {
    if traj.steps.is_empty() {
        return Err(Error::EmptyData);
    }
    match criterion {
        SelectCriterion::Index(i) => {
            if i < traj.steps.len() {
                Ok(i)
            } else {
                Err(Error::StepOutOfRange {
                    index: i,
                    len: traj.steps.len(),
                })
            }
        }
        SelectCriterion::Auto => {
            let mut best: Option<usize> = None;
            for (i, step) in traj.steps.iter().enumerate() {
                if step.stats.coverage < coverage_floor {
                    continue;
                }
                best = Some(match best {
                    None => i,
                    Some(j) => {
                        let (bd, bi) = (
                            traj.steps[j].stats.density,
                            traj.steps[j].stats.interpretability,
                        );
                        let s = &step.stats;
                        if s.density > bd || (s.density == bd && s.interpretability < bi) {
                            i
                        } else {
                            j
                        }
                    }
                });
            }
            if let Some(i) = best {
                return Ok(i);
            }
            let mut best = 0usize;
            for (i, step) in traj.steps.iter().enumerate().skip(1) {
                let score = step.stats.coverage * step.stats.density;
                if score > traj.steps[best].stats.coverage * traj.steps[best].stats.density {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

pub const DEFAULT_MAX_BOXES: usize = 5;
pub const DEFAULT_STOP_COVERAGE: f64 = 0.85;

/// One covering round: the selected box, its stats on that round's
/// residual data, and the trajectory it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverEntry {
    pub scenario_box: ScenarioBox,
    pub stats: BoxStats,
    pub trajectory: PeelingTrajectory,
    /// Share of all originally vulnerable points captured so far.
    pub cumulative_coverage: f64,
}

/// Repeated peel-and-select. Each selected box's points are removed before
/// the next round, so boxes may overlap in space but are fitted on
/// disjoint data. Stops at cumulative coverage, the box budget, or when no
/// vulnerable points remain.
pub fn cover(
    data: &LabeledSamples,
    cfg: &PrimConfig,
    space: &UncertaintySpace,
    max_boxes: usize,
    stop_coverage: f64,
) -> Result<Vec<CoverEntry>> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let total_vulnerable = data.n_vulnerable();
    let mut residual: Vec<usize> = (0..data.len()).collect();
    let mut covered = 0usize;
    let mut entries: Vec<CoverEntry> = Vec::new();

    while entries.len() < max_boxes && !residual.is_empty() {
        let round_data = data.subset(&residual);
        if round_data.n_vulnerable() == 0 {
            break;
        }
        let mut traj = peel(&round_data, cfg, space, &ScenarioBox::full(space.k()))?;
        let idx = select_box(&traj, SelectCriterion::Auto, cfg.coverage_floor)?;
        traj.selected_index = Some(idx);
        let selected = traj.steps[idx].scenario_box.clone();
        let stats = traj.steps[idx].stats;

        covered += stats.n_vulnerable_inside;
        let cumulative_coverage = if total_vulnerable == 0 {
            0.0
        } else {
            covered as f64 / total_vulnerable as f64
        };
        entries.push(CoverEntry {
            scenario_box: selected.clone(),
            stats,
            trajectory: traj,
            cumulative_coverage,
        });

        residual.retain(|&i| !selected.contains(&data.points[i]));
        if cumulative_coverage >= stop_coverage {
            break;
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::UncertaintySpace;
    use crate::sampling;
    use crate::simulator;

    fn oracle_box_data(n: usize, seed: u64) -> (LabeledSamples, UncertaintySpace) {
        let space = UncertaintySpace::unit_cube(2);
        let m = sampling::uniform(&space, n, seed);
        let labels: Vec<bool> = m
            .points
            .iter()
            .map(|p| simulator::oracle_box(p).unwrap())
            .collect();
        let outputs = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        (
            LabeledSamples {
                points: m.points,
                outputs,
                labels,
            },
            space,
        )
    }

    fn hand_data() -> (LabeledSamples, UncertaintySpace) {
        // 10 points on a line; vulnerable cluster at x in [0.6, 0.9].
        let xs = [0.05, 0.15, 0.25, 0.35, 0.45, 0.6, 0.7, 0.8, 0.9, 0.95];
        let labels = [
            false, false, false, true, false, true, true, true, true, false,
        ];
        let points: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let outputs = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        (
            LabeledSamples {
                points,
                outputs,
                labels: labels.to_vec(),
            },
            UncertaintySpace::unit_cube(1),
        )
    }

    #[test]
    fn dataset_csv_round_trips_exactly() {
        let (data, space) = oracle_box_data(40, 17);
        let mut buffer = Vec::new();
        data.to_csv(&space, &mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert!(text.starts_with("x1,x2,delta,vulnerable\n"));
        let back = LabeledSamples::from_csv(&space, text.as_bytes()).unwrap();
        assert_eq!(back, data, "shortest-repr floats must parse back bit-equal");

        let wrong = UncertaintySpace::unit_cube(3);
        assert!(LabeledSamples::from_csv(&wrong, text.as_bytes()).is_err());
        let truncated = text.replace(",true", ",maybe");
        assert!(LabeledSamples::from_csv(&space, truncated.as_bytes()).is_err());
    }

    #[test]
    fn stats_match_hand_count() {
        let (data, _) = hand_data();
        let b = ScenarioBox {
            limits: vec![Some((0.6, 0.9))],
        };
        let s = box_stats(&b, &data);
        assert_eq!(s.n_inside, 4);
        assert_eq!(s.n_vulnerable_inside, 4);
        assert_eq!(s.support, 0.4);
        assert_eq!(s.density, 1.0);
        assert_eq!(s.coverage, 0.8);
        assert_eq!(s.vulnerable_mass, 0.4);
        assert_eq!(s.interpretability, 1);
    }

    #[test]
    fn full_box_covers_everything() {
        let (data, _) = oracle_box_data(500, 3);
        let s = box_stats(&ScenarioBox::full(2), &data);
        assert_eq!(s.coverage, 1.0);
        assert_eq!(s.support, 1.0);
        let global = data.n_vulnerable() as f64 / data.len() as f64;
        assert_eq!(s.density, global);
        assert_eq!(s.interpretability, 0);
    }

    #[test]
    fn empty_box_has_defined_stats() {
        let (data, _) = hand_data();
        let b = ScenarioBox {
            limits: vec![Some((0.96, 0.99))],
        };
        let s = box_stats(&b, &data);
        assert_eq!((s.density, s.coverage, s.n_inside), (0.0, 0.0, 0));
    }

    #[test]
    fn membership_is_closed_on_both_bounds() {
        let b = ScenarioBox {
            limits: vec![Some((0.2, 0.5)), None],
        };
        assert!(b.contains(&[0.2, 99.0]));
        assert!(b.contains(&[0.5, -3.0]));
        assert!(!b.contains(&[0.19999, 0.0]));
    }

    #[test]
    fn saturated_data_yields_single_step() {
        let (mut data, space) = hand_data();
        data.labels = vec![true; data.len()];
        let traj = peel(&data, &PrimConfig::default(), &space, &ScenarioBox::full(1)).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].stats.density, 1.0);
    }

    #[test]
    fn all_negative_data_yields_single_step() {
        let (mut data, space) = hand_data();
        data.labels = vec![false; data.len()];
        let traj = peel(&data, &PrimConfig::default(), &space, &ScenarioBox::full(1)).unwrap();
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].stats.density, 0.0);
    }

    #[test]
    fn peeling_recovers_the_oracle_box() {
        let (data, space) = oracle_box_data(2000, 12);
        let cfg = PrimConfig::default();
        let traj = peel(&data, &cfg, &space, &ScenarioBox::full(2)).unwrap();
        let idx = select_box(&traj, SelectCriterion::Auto, cfg.coverage_floor).unwrap();
        let step = &traj.steps[idx];
        let (lo1, hi1) = step.scenario_box.limits[0].unwrap();
        let (lo2, hi2) = step.scenario_box.limits[1].unwrap();
        assert!((lo1 - 0.2).abs() <= 0.05, "lo1 = {lo1}");
        assert!((hi1 - 0.5).abs() <= 0.05, "hi1 = {hi1}");
        assert!((lo2 - 0.6).abs() <= 0.05, "lo2 = {lo2}");
        assert!((hi2 - 0.9).abs() <= 0.05, "hi2 = {hi2}");
        assert!(step.stats.density >= 0.95, "density {}", step.stats.density);
        assert!(step.stats.coverage >= 0.90, "coverage {}", step.stats.coverage);
    }

    #[test]
    fn trajectory_is_monotone_and_peels_gently() {
        let cfg = PrimConfig::default();
        for seed in [1u64, 2, 3] {
            let (data, space) = oracle_box_data(800, seed);
            let traj = peel(&data, &cfg, &space, &ScenarioBox::full(2)).unwrap();
            for w in traj.steps.windows(2) {
                assert!(w[1].stats.density >= w[0].stats.density);
                assert!(w[1].stats.support < w[0].stats.support);
                let removed = w[0].stats.n_inside - w[1].stats.n_inside;
                let cap = (cfg.patience * w[0].stats.n_inside as f64).ceil() as usize;
                assert!(removed >= 1 && removed <= cap, "removed {removed}, cap {cap}");
            }
        }
    }

    #[test]
    fn peel_is_deterministic() {
        let (data, space) = oracle_box_data(500, 9);
        let cfg = PrimConfig::default();
        let a = peel(&data, &cfg, &space, &ScenarioBox::full(2)).unwrap();
        let b = peel(&data, &cfg, &space, &ScenarioBox::full(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn peel_rejects_bad_inputs() {
        let (data, space) = hand_data();
        let empty = LabeledSamples {
            points: vec![],
            outputs: vec![],
            labels: vec![],
        };
        assert!(matches!(
            peel(&empty, &PrimConfig::default(), &space, &ScenarioBox::full(1)),
            Err(Error::EmptyData)
        ));
        let off = ScenarioBox {
            limits: vec![Some((2.0, 3.0))],
        };
        assert!(matches!(
            peel(&data, &PrimConfig::default(), &space, &off),
            Err(Error::EmptyBox)
        ));
        let bad = PrimConfig {
            patience: 0.7,
            ..PrimConfig::default()
        };
        assert!(peel(&data, &bad, &space, &ScenarioBox::full(1)).is_err());
    }

    fn fake_step(coverage: f64, density: f64, restricted: usize) -> TrajectoryStep {
        let mut b = ScenarioBox::full(4);
        for d in 0..restricted {
            b.limits[d] = Some((0.0, 0.5));
        }
        let stats = BoxStats {
            coverage,
            density,
            support: 0.5,
            vulnerable_mass: 0.1,
            interpretability: restricted,
            n_inside: 10,
            n_vulnerable_inside: 5,
        };
        TrajectoryStep {
            scenario_box: b,
            stats,
            peeled_dim: None,
            peeled_side: None,
        }
    }

    #[test]
    fn auto_selection_prefers_density_above_the_floor() {
        let traj = PeelingTrajectory {
            steps: vec![
                fake_step(1.0, 0.3, 0),
                fake_step(0.95, 0.7, 1),
                fake_step(0.89, 0.93, 2),
                fake_step(0.5, 0.99, 3),
            ],
            selected_index: None,
        };
        assert_eq!(select_box(&traj, SelectCriterion::Auto, 0.6).unwrap(), 2);
    }

    #[test]
    fn auto_selection_breaks_density_ties_toward_simpler_earlier_boxes() {
        let traj = PeelingTrajectory {
            steps: vec![
                fake_step(0.9, 0.9, 2),
                fake_step(0.8, 0.9, 1),
                fake_step(0.7, 0.9, 1),
            ],
            selected_index: None,
        };
        assert_eq!(select_box(&traj, SelectCriterion::Auto, 0.6).unwrap(), 1);
    }

    #[test]
    fn auto_selection_falls_back_to_coverage_density_product() {
        let traj = PeelingTrajectory {
            steps: vec![fake_step(0.5, 0.4, 1), fake_step(0.4, 0.9, 2)],
            selected_index: None,
        };
        // floor 0.6 unmet; 0.4*0.9 = 0.36 > 0.5*0.4 = 0.2
        assert_eq!(select_box(&traj, SelectCriterion::Auto, 0.6).unwrap(), 1);
    }

    #[test]
    fn index_selection_is_verbatim_and_bounds_checked() {
        let traj = PeelingTrajectory {
            steps: vec![fake_step(1.0, 0.1, 0), fake_step(0.1, 0.1, 1)],
            selected_index: None,
        };
        assert_eq!(select_box(&traj, SelectCriterion::Index(1), 0.6).unwrap(), 1);
        assert!(matches!(
            select_box(&traj, SelectCriterion::Index(2), 0.6),
            Err(Error::StepOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn single_step_trajectory_selects_itself() {
        let traj = PeelingTrajectory {
            steps: vec![fake_step(0.2, 0.2, 0)],
            selected_index: None,
        };
        assert_eq!(select_box(&traj, SelectCriterion::Auto, 0.6).unwrap(), 0);
    }

    fn oracle_ring_data(n: usize, seed: u64) -> (LabeledSamples, UncertaintySpace) {
        let space = UncertaintySpace::unit_cube(2);
        let m = sampling::lhs(&space, n, seed);
        let labels: Vec<bool> = m
            .points
            .iter()
            .map(|p| simulator::oracle_ring(p).unwrap())
            .collect();
        let outputs = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
        (
            LabeledSamples {
                points: m.points,
                outputs,
                labels,
            },
            space,
        )
    }

    #[test]
    fn covering_needs_multiple_boxes_for_the_ring() {
        let (data, space) = oracle_ring_data(2000, 4);
        let entries = cover(&data, &PrimConfig::default(), &space, 10, 0.85).unwrap();
        assert!(entries.len() >= 2, "got {} boxes", entries.len());
        let last = entries.last().unwrap();
        assert!(
            last.cumulative_coverage >= 0.85,
            "cumulative {}",
            last.cumulative_coverage
        );
    }

    #[test]
    fn covering_stops_at_one_box_for_the_oracle_box() {
        let (data, space) = oracle_box_data(2000, 12);
        let entries = cover(
            &data,
            &PrimConfig::default(),
            &space,
            DEFAULT_MAX_BOXES,
            0.85,
        )
        .unwrap();
        assert_eq!(entries.len(), 1);
        assert!(entries[0].cumulative_coverage >= 0.85);
    }

    #[test]
    fn covering_without_vulnerable_points_is_empty() {
        let (mut data, space) = oracle_box_data(300, 8);
        data.labels = vec![false; data.len()];
        let entries = cover(&data, &PrimConfig::default(), &space, 5, 0.85).unwrap();
        assert!(entries.is_empty());
    }

    #[test]
    fn covering_fits_on_disjoint_residuals() {
        let (data, space) = oracle_ring_data(1500, 6);
        let entries = cover(&data, &PrimConfig::default(), &space, 10, 0.95).unwrap();
        // A point inside an earlier box must not be counted by any later
        // round: reconstruct the residual chain and compare counts.
        let mut residual: Vec<usize> = (0..data.len()).collect();
        for entry in &entries {
            let round = data.subset(&residual);
            let s = box_stats(&entry.scenario_box, &round);
            assert_eq!(s.n_inside, entry.stats.n_inside);
            assert_eq!(s.n_vulnerable_inside, entry.stats.n_vulnerable_inside);
            residual.retain(|&i| !entry.scenario_box.contains(&data.points[i]));
        }
    }

    #[test]
    fn trajectory_json_has_flat_step_schema() {
        let (data, space) = oracle_box_data(400, 2);
        let traj = peel(&data, &PrimConfig::default(), &space, &ScenarioBox::full(2)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&traj).unwrap();
        let step = &v["steps"][1];
        for key in [
            "limits",
            "coverage",
            "density",
            "support",
            "interpretability",
            "peeled_dim",
            "peeled_side",
        ] {
            assert!(step.get(key).is_some(), "missing key {key}");
        }
        let back: PeelingTrajectory = serde_json::from_value(v).unwrap();
        assert_eq!(back, traj);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { cases: 48, ..Default::default() })]
        #[test]
        fn peel_invariants_hold_on_random_data(seed in 0u64..5000, n in 30usize..300) {
            let space = UncertaintySpace::unit_cube(3);
            let m = sampling::uniform(&space, n, seed);
            // Random labels with a planted soft box so peeling has signal.
            let labels: Vec<bool> = m.points.iter().enumerate().map(|(i, p)| {
                let planted = p[0] > 0.4 && p[1] < 0.7;
                let noise = (seed as usize + i * 2654435761).is_multiple_of(10);
                planted ^ noise
            }).collect();
            let outputs: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
            let data = LabeledSamples { points: m.points, outputs, labels };
            let cfg = PrimConfig::default();
            let traj = peel(&data, &cfg, &space, &ScenarioBox::full(3)).unwrap();
            for w in traj.steps.windows(2) {
                proptest::prop_assert!(w[1].stats.density >= w[0].stats.density);
                proptest::prop_assert!(w[1].stats.support < w[0].stats.support);
                let removed = w[0].stats.n_inside - w[1].stats.n_inside;
                let cap = (cfg.patience * w[0].stats.n_inside as f64).ceil() as usize;
                proptest::prop_assert!(removed >= 1 && removed <= cap);
            }
        }
    }
}
