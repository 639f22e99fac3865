//! Metamodel-guided adaptive sampling: a GP fitted to the evaluated
//! scenarios labels a fixed candidate pool, PRIM proposes a box on those
//! posterior labels, and the next batch of true simulator calls is drawn
//! from that box (its interior, its border, or both, depending on the
//! mode). The expensive simulator is only ever called on the initial design
//! and the per-iteration batches.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::metamodel::{self, GPModel, Hyper, KernelParams};
use crate::metrics::{self, Histogram};
use crate::prim::{
    self, BoxStats, CoverEntry, LabeledSamples, PrimConfig, ScenarioBox, SelectCriterion,
};
use crate::sampling::{self, SampleMatrix};
use crate::seed;
use crate::simulator;

pub const DEFAULT_POOL_SIZE: usize = 2000;
pub const DEFAULT_INTERIOR_PROB: f64 = 0.5;
const HIST_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptiveMode {
    /// Each batch point lands in the box interior with `interior_prob`,
    /// otherwise on its border.
    InteriorOrBorder,
    /// Every batch point lands on the box border.
    BorderOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptiveConfig {
    pub n_init: usize,
    /// Fixed candidate pool the GP labels each iteration; never simulated.
    pub pool_size: usize,
    pub n_iter: usize,
    pub batch: usize,
    pub mode: AdaptiveMode,
    pub interior_prob: f64,
    pub prim: PrimConfig,
    pub hyper: Hyper,
    /// Root seed; stage seeds are derived from it per iteration.
    pub seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig {
            n_init: 100,
            pool_size: DEFAULT_POOL_SIZE,
            n_iter: 50,
            batch: 1,
            mode: AdaptiveMode::InteriorOrBorder,
            interior_prob: DEFAULT_INTERIOR_PROB,
            prim: PrimConfig::default(),
            hyper: Hyper::default(),
            seed: 0,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::InvalidConfig("n_init must be >= 2".into()));
        }
        if self.pool_size < 5 * self.n_init {
            return Err(Error::InvalidConfig(format!(
                "pool_size {} must be >= 5 * n_init ({})",
                self.pool_size,
                5 * self.n_init
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.interior_prob) {
            return Err(Error::InvalidConfig(format!(
                "interior_prob {} must be in [0, 1]",
                self.interior_prob
            )));
        }
        if let Hyper::Optimize { budget, .. } = self.hyper {
            if budget == 0 {
                return Err(Error::InvalidConfig("optimizer budget must be >= 1".into()));
            }
        }
        self.prim.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gp_params: KernelParams,
    pub gp_lml: f64,
    /// Pool points the posterior labels vulnerable this iteration.
    pub pool_vulnerable: usize,
    pub selected_box: ScenarioBox,
    /// Stats of the selected box over the posterior-labeled pool.
    pub selected_stats: BoxStats,
    /// True when the selected box had no restricted dimension and the
    /// batch fell back to uniform sampling over the whole space.
    pub fallback: bool,
    pub new_points: Vec<Vec<f64>>,
    /// True-simulator deltas for `new_points`, same order.
    pub new_outputs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveState {
    /// All truly simulated scenarios so far.
    pub dataset: LabeledSamples,
    pub pool: SampleMatrix,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    pub true_calls: usize,
    /// Set by `finalize`.
    pub final_gp: Option<GPModel>,
    pub final_pool_labels: Vec<bool>,
    pub final_boxes: Vec<CoverEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveRun {
    pub cfg: AdaptiveConfig,
    pub experiment: ExperimentConfig,
    pub state: AdaptiveState,
}

impl AdaptiveRun {
    /// Draws the initial design (simulated) and the candidate pool (not
    /// simulated).
    pub fn new(cfg: AdaptiveConfig, experiment: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        experiment.validate()?;
        let init = sampling::lhs_with(
            &experiment.space,
            cfg.n_init,
            &mut seed::rng(cfg.seed, "init", 0),
        );
        let outcomes = simulator::evaluate_matrix(&experiment, &init)?;
        let dataset = LabeledSamples::from_outcomes(&init, &outcomes, &experiment.rule);
        let pool = sampling::lhs_with(
            &experiment.space,
            cfg.pool_size,
            &mut seed::rng(cfg.seed, "pool", 0),
        );
        let true_calls = cfg.n_init;
        Ok(AdaptiveRun {
            cfg,
            experiment,
            state: AdaptiveState {
                dataset,
                pool,
                iteration: 0,
                history: Vec::new(),
                true_calls,
                final_gp: None,
                final_pool_labels: Vec::new(),
                final_boxes: Vec::new(),
            },
        })
    }

    pub fn remaining(&self) -> usize {
        self.cfg.n_iter - self.state.iteration
    }

    pub fn is_done(&self) -> bool {
        self.state.final_gp.is_some()
    }

    fn iteration_hyper(&self, iteration: usize) -> Hyper {
        match &self.cfg.hyper {
            Hyper::Fixed(p) => Hyper::Fixed(p.clone()),
            Hyper::Optimize { budget, .. } => Hyper::Optimize {
                budget: *budget,
                seed: seed::sub_seed(self.cfg.seed, "gp", iteration as u64),
            },
        }
    }

    fn posterior_pool(&self, iteration: usize) -> Result<(GPModel, LabeledSamples)> {
        let hyper = self.iteration_hyper(iteration);
        let gp = metamodel::fit(&self.state.dataset, &self.experiment.space, &hyper)?;
        let posterior = gp.predict(&self.state.pool.points)?;
        let labels: Vec<bool> = posterior
            .mean
            .iter()
            .map(|&m| self.experiment.rule.label(m))
            .collect();
        let pool_data =
            LabeledSamples::new(self.state.pool.points.clone(), posterior.mean, labels)?;
        Ok((gp, pool_data))
    }

    /// One refine-propose-sample-simulate iteration.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let i = self.state.iteration;
        if i >= self.cfg.n_iter {
            return Err(Error::InvalidConfig(format!(
                "all {} iterations already run",
                self.cfg.n_iter
            )));
        }
        let (gp, pool_data) = self.posterior_pool(i)?;
        let space = &self.experiment.space;
        let traj = prim::peel(
            &pool_data,
            &self.cfg.prim,
            space,
            &ScenarioBox::full(space.k()),
        )?;
        let idx = prim::select_box(&traj, SelectCriterion::Auto, self.cfg.prim.coverage_floor)?;
        let selected_box = traj.steps[idx].scenario_box.clone();
        let selected_stats = traj.steps[idx].stats;

        let mut rng = seed::rng(self.cfg.seed, "batch", i as u64);
        let fallback = selected_box.is_unrestricted();
        let new_points: Vec<Vec<f64>> = if fallback {
            sampling::uniform_in_box_with(
                &ScenarioBox::full(space.k()),
                space,
                self.cfg.batch,
                &mut rng,
            )?
            .points
        } else {
            match self.cfg.mode {
                AdaptiveMode::BorderOnly => {
                    sampling::uniform_on_border_with(&selected_box, space, self.cfg.batch, &mut rng)?
                        .points
                }
                AdaptiveMode::InteriorOrBorder => {
                    let mut points = Vec::with_capacity(self.cfg.batch);
                    for _ in 0..self.cfg.batch {
                        let interior = rng.gen_bool(self.cfg.interior_prob);
                        let m = if interior {
                            sampling::uniform_in_box_with(&selected_box, space, 1, &mut rng)?
                        } else {
                            sampling::uniform_on_border_with(&selected_box, space, 1, &mut rng)?
                        };
                        points.extend(m.points);
                    }
                    points
                }
            }
        };

        let mut new_outputs = Vec::with_capacity(new_points.len());
        for p in &new_points {
            let outcome =
                simulator::evaluate_point(&self.experiment, p, self.experiment.lever.delta)?;
            self.state.dataset.points.push(p.clone());
            self.state.dataset.outputs.push(outcome.delta);
            self.state
                .dataset
                .labels
                .push(self.experiment.rule.label(outcome.delta));
            new_outputs.push(outcome.delta);
        }
        self.state.true_calls += new_points.len();

        let record = IterationRecord {
            iteration: i,
            gp_params: gp.params.clone(),
            gp_lml: gp.log_marginal_likelihood,
            pool_vulnerable: pool_data.n_vulnerable(),
            selected_box,
            selected_stats,
            fallback,
            new_points,
            new_outputs,
        };
        self.state.history.push(record.clone());
        self.state.iteration = i + 1;
        Ok(record)
    }

    /// Final refit on everything simulated, relabel of the pool, and a
    /// covering pass over the posterior labels. Idempotent.
    pub fn finalize(&mut self) -> Result<()> {
        if self.is_done() {
            return Ok(());
        }
        let (gp, pool_data) = self.posterior_pool(self.state.iteration)?;
        let boxes = prim::cover(
            &pool_data,
            &self.cfg.prim,
            &self.experiment.space,
            prim::DEFAULT_MAX_BOXES,
            prim::DEFAULT_STOP_COVERAGE,
        )?;
        self.state.final_pool_labels = pool_data.labels;
        self.state.final_gp = Some(gp);
        self.state.final_boxes = boxes;
        Ok(())
    }
}

/// Runs the full loop: `n_init` initial simulator calls, `n_iter` batches,
/// then the final refit and covering.
pub fn run_adaptive(cfg: AdaptiveConfig, experiment: ExperimentConfig) -> Result<AdaptiveRun> {
    let mut run = AdaptiveRun::new(cfg, experiment)?;
    while run.state.iteration < run.cfg.n_iter {
        run.step()?;
    }
    run.finalize()?;
    Ok(run)
}

/// An independently seeded LHS design evaluated with the true simulator,
/// for judging a finished run.
pub fn truth_set(experiment: &ExperimentConfig, n: usize, seed_value: u64) -> Result<LabeledSamples> {
    if n == 0 {
        return Err(Error::EmptyTruth);
    }
    let m = sampling::lhs(&experiment.space, n, seed_value);
    let outcomes = simulator::evaluate_matrix(experiment, &m)?;
    Ok(LabeledSamples::from_outcomes(&m, &outcomes, &experiment.rule))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_truth: usize,
    /// Pearson correlation between posterior mean and true deltas; zero
    /// with the degenerate flag set when either side is constant.
    pub pearson_r: f64,
    pub degenerate_correlation: bool,
    /// Share of truth points whose posterior label matches the true label.
    pub accuracy: f64,
    pub confusion: ConfusionCounts,
    pub true_calls: usize,
    pub hist_true_deltas: Histogram,
    pub hist_posterior_deltas: Histogram,
    /// Deltas of the scenarios the loop chose to simulate.
    pub hist_picked_deltas: Histogram,
}

/// Scores a finalized run against an out-of-sample truth set.
pub fn evaluate_against_truth(
    run: &AdaptiveRun,
    truth: &LabeledSamples,
) -> Result<DiagnosticsReport> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let gp = run
        .state
        .final_gp
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("finalize the run before evaluating".into()))?;
    evaluate_model(
        gp,
        &run.experiment.rule,
        &run.state.dataset.outputs,
        run.state.true_calls,
        truth,
    )
}

/// Scores a fitted metamodel against an out-of-sample truth set. `picked`
/// holds the deltas of the scenarios that were truly simulated; it only
/// feeds the picked-delta histogram.
pub fn evaluate_model(
    gp: &GPModel,
    rule: &crate::experiment::VulnerabilityRule,
    picked: &[f64],
    true_calls: usize,
    truth: &LabeledSamples,
) -> Result<DiagnosticsReport> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let posterior = gp.predict(&truth.points)?;
    let (pearson_r, degenerate_correlation) = metrics::pearson(&posterior.mean, &truth.outputs);

    let mut confusion = ConfusionCounts {
        true_positive: 0,
        false_positive: 0,
        true_negative: 0,
        false_negative: 0,
    };
    for (m, &actual) in posterior.mean.iter().zip(&truth.labels) {
        let predicted = rule.label(*m);
        match (predicted, actual) {
            (true, true) => confusion.true_positive += 1,
            (true, false) => confusion.false_positive += 1,
            (false, false) => confusion.true_negative += 1,
            (false, true) => confusion.false_negative += 1,
        }
    }
    let n_truth = truth.len();
    let accuracy = (confusion.true_positive + confusion.true_negative) as f64 / n_truth as f64;

    let low = truth
        .outputs
        .iter()
        .chain(&posterior.mean)
        .chain(picked)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let high = truth
        .outputs
        .iter()
        .chain(&posterior.mean)
        .chain(picked)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(DiagnosticsReport {
        n_truth,
        pearson_r,
        degenerate_correlation,
        accuracy,
        confusion,
        true_calls,
        hist_true_deltas: metrics::histogram(&truth.outputs, low, high, HIST_BINS),
        hist_posterior_deltas: metrics::histogram(&posterior.mean, low, high, HIST_BINS),
        hist_picked_deltas: metrics::histogram(picked, low, high, HIST_BINS),
    })
}

/// One JSON object per line, one line per iteration.
pub fn write_history_jsonl(history: &[IterationRecord], mut writer: impl Write) -> Result<()> {
    for record in history {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{
        Comparator, PolicyLever, UncertaintyDim, UncertaintySpace, VulnerabilityRule,
    };

    fn oracle_experiment() -> ExperimentConfig {
        ExperimentConfig {
            space: UncertaintySpace {
                dims: vec![
                    UncertaintyDim {
                        name: "a".into(),
                        low: 0.0,
                        high: 1.0,
                        baseline: 0.5,
                    },
                    UncertaintyDim {
                        name: "b".into(),
                        low: 0.0,
                        high: 1.0,
                        baseline: 0.5,
                    },
                ],
            },
            lever: PolicyLever {
                name: "lever".into(),
                delta: 1.0,
            },
            simulator_id: "oracle_box".into(),
            rule: VulnerabilityRule {
                comparator: Comparator::DeltaNonneg,
                description: None,
            },
            seed: 0,
            n_scenarios: 10,
            profile: None,
        }
    }

    fn fast_cfg(seed_value: u64, mode: AdaptiveMode) -> AdaptiveConfig {
        AdaptiveConfig {
            n_init: 20,
            pool_size: 100,
            n_iter: 3,
            batch: 2,
            mode,
            interior_prob: 0.5,
            prim: PrimConfig::default(),
            hyper: Hyper::Fixed(KernelParams {
                signal_variance: 1.0,
                length_scales: vec![0.2, 0.2],
                noise_variance: 1e-4,
            }),
            seed: seed_value,
        }
    }

    #[test]
    fn call_accounting_is_exact() {
        let cfg = fast_cfg(7, AdaptiveMode::InteriorOrBorder);
        let run = run_adaptive(cfg.clone(), oracle_experiment()).unwrap();
        assert_eq!(run.state.true_calls, cfg.n_init + cfg.n_iter * cfg.batch);
        assert_eq!(run.state.dataset.len(), run.state.true_calls);
        assert_eq!(run.state.history.len(), cfg.n_iter);
        for (i, record) in run.state.history.iter().enumerate() {
            assert_eq!(record.iteration, i);
            assert_eq!(record.new_points.len(), cfg.batch);
            assert_eq!(record.new_outputs.len(), cfg.batch);
        }
        assert_eq!(run.state.pool.n(), cfg.pool_size);
        assert!(run.state.final_gp.is_some());
        assert_eq!(run.state.final_pool_labels.len(), cfg.pool_size);
    }

    #[test]
    fn pool_is_never_simulated_and_never_changes() {
        let cfg = fast_cfg(3, AdaptiveMode::InteriorOrBorder);
        let mut run = AdaptiveRun::new(cfg.clone(), oracle_experiment()).unwrap();
        let pool_before = run.state.pool.points.clone();
        while run.remaining() > 0 {
            run.step().unwrap();
        }
        run.finalize().unwrap();
        assert_eq!(run.state.pool.points, pool_before);
        // Every simulated point is initial or recorded in some batch.
        let recorded: usize = run.state.history.iter().map(|r| r.new_points.len()).sum();
        assert_eq!(run.state.dataset.len(), cfg.n_init + recorded);
    }

    #[test]
    fn border_mode_points_sit_on_selected_box_faces() {
        let cfg = fast_cfg(11, AdaptiveMode::BorderOnly);
        let run = run_adaptive(cfg, oracle_experiment()).unwrap();
        let space = &run.experiment.space;
        let mut checked = 0;
        for record in &run.state.history {
            if record.fallback {
                continue;
            }
            let b = &record.selected_box;
            for p in &record.new_points {
                assert!(b.contains(p), "border point left the box");
                let on_face = b.limits.iter().enumerate().any(|(d, lim)| {
                    let (lo, hi) = lim.unwrap_or((space.dims[d].low, space.dims[d].high));
                    lim.is_some() && (p[d] == lo || p[d] == hi)
                });
                assert!(on_face, "point {p:?} is not on any face of {b:?}");
                checked += 1;
            }
        }
        assert!(checked > 0, "no non-fallback iterations to check");
    }

    #[test]
    fn interior_mode_points_stay_in_the_selected_box() {
        let cfg = fast_cfg(5, AdaptiveMode::InteriorOrBorder);
        let run = run_adaptive(cfg, oracle_experiment()).unwrap();
        for record in &run.state.history {
            if record.fallback {
                continue;
            }
            for p in &record.new_points {
                assert!(record.selected_box.contains(p));
            }
        }
    }

    #[test]
    fn zero_iterations_match_the_plain_pipeline() {
        let mut cfg = fast_cfg(9, AdaptiveMode::InteriorOrBorder);
        cfg.n_iter = 0;
        let experiment = oracle_experiment();
        let run = run_adaptive(cfg.clone(), experiment.clone()).unwrap();
        assert!(run.state.history.is_empty());
        assert_eq!(run.state.dataset.len(), cfg.n_init);

        // Same design, same GP, same covering, assembled by hand.
        let init = sampling::lhs_with(
            &experiment.space,
            cfg.n_init,
            &mut seed::rng(cfg.seed, "init", 0),
        );
        let outcomes = simulator::evaluate_matrix(&experiment, &init).unwrap();
        let dataset = LabeledSamples::from_outcomes(&init, &outcomes, &experiment.rule);
        let gp = metamodel::fit(&dataset, &experiment.space, &cfg.hyper).unwrap();
        let pool = sampling::lhs_with(
            &experiment.space,
            cfg.pool_size,
            &mut seed::rng(cfg.seed, "pool", 0),
        );
        let posterior = gp.predict(&pool.points).unwrap();
        let labels: Vec<bool> = posterior
            .mean
            .iter()
            .map(|&m| experiment.rule.label(m))
            .collect();
        let pool_data = LabeledSamples::new(pool.points, posterior.mean, labels).unwrap();
        let boxes = prim::cover(
            &pool_data,
            &cfg.prim,
            &experiment.space,
            prim::DEFAULT_MAX_BOXES,
            prim::DEFAULT_STOP_COVERAGE,
        )
        .unwrap();
        assert_eq!(
            serde_json::to_string(&run.state.final_boxes).unwrap(),
            serde_json::to_string(&boxes).unwrap()
        );
    }

    #[test]
    fn runs_are_deterministic_per_seed() {
        let cfg = fast_cfg(13, AdaptiveMode::BorderOnly);
        let a = run_adaptive(cfg.clone(), oracle_experiment()).unwrap();
        let b = run_adaptive(cfg.clone(), oracle_experiment()).unwrap();
        assert_eq!(
            serde_json::to_string(&a.state).unwrap(),
            serde_json::to_string(&b.state).unwrap()
        );
        let c = run_adaptive(fast_cfg(14, AdaptiveMode::BorderOnly), oracle_experiment()).unwrap();
        assert_ne!(
            serde_json::to_string(&a.state.dataset).unwrap(),
            serde_json::to_string(&c.state.dataset).unwrap()
        );
    }

    #[test]
    fn nothing_vulnerable_triggers_the_uniform_fallback() {
        // Nordhavn's lever is large enough that no scenario is vulnerable,
        // so the posterior labels nothing and PRIM never peels: the
        // selected box stays unrestricted and batches fall back to uniform
        // draws over the whole space.
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../experiments");
        let experiment =
            crate::experiment::load_experiment(format!("{dir}/nordhavn.experiment")).unwrap();
        let cfg = AdaptiveConfig {
            n_init: 15,
            pool_size: 75,
            n_iter: 2,
            batch: 3,
            mode: AdaptiveMode::InteriorOrBorder,
            interior_prob: 0.5,
            prim: PrimConfig::default(),
            hyper: Hyper::Fixed(KernelParams {
                signal_variance: 0.01,
                length_scales: vec![1.0, 1.0, 1.0],
                noise_variance: 10.0,
            }),
            seed: 21,
        };
        let run = run_adaptive(cfg, experiment).unwrap();
        assert!(run.state.dataset.outputs.iter().all(|&d| d < 0.0));
        for record in &run.state.history {
            assert!(record.fallback);
            assert!(record.selected_box.is_unrestricted());
            assert_eq!(record.pool_vulnerable, 0);
            for p in &record.new_points {
                assert!(run.experiment.space.contains(p));
            }
        }
        assert!(run.state.final_boxes.is_empty());
    }

    #[test]
    fn evaluation_reports_fit_quality_and_degeneracy() {
        let cfg = fast_cfg(2, AdaptiveMode::InteriorOrBorder);
        let experiment = oracle_experiment();
        let run = run_adaptive(cfg, experiment.clone()).unwrap();
        let truth = truth_set(&experiment, 80, seed::sub_seed(99, "truth", 0)).unwrap();
        let report = evaluate_against_truth(&run, &truth).unwrap();
        assert_eq!(report.n_truth, 80);
        assert_eq!(report.true_calls, run.state.true_calls);
        assert_eq!(
            report.confusion.true_positive
                + report.confusion.false_positive
                + report.confusion.true_negative
                + report.confusion.false_negative,
            80
        );
        assert!((0.0..=1.0).contains(&report.accuracy));
        assert!(report.pearson_r.abs() <= 1.0 + 1e-12);
        assert_eq!(report.hist_true_deltas.counts.iter().sum::<usize>(), 80);
        assert_eq!(
            report.hist_posterior_deltas.counts.iter().sum::<usize>(),
            80
        );
        assert_eq!(
            report.hist_picked_deltas.counts.iter().sum::<usize>(),
            run.state.dataset.len()
        );

        // A truth set with constant outputs makes the correlation
        // undefined; it must come back flagged, not NaN.
        let constant = LabeledSamples {
            points: truth.points.clone(),
            outputs: vec![1.0; truth.len()],
            labels: vec![true; truth.len()],
        };
        let degenerate = evaluate_against_truth(&run, &constant).unwrap();
        assert!(degenerate.degenerate_correlation);
        assert_eq!(degenerate.pearson_r, 0.0);
    }

    #[test]
    fn unfinalized_runs_cannot_be_evaluated() {
        let cfg = fast_cfg(4, AdaptiveMode::InteriorOrBorder);
        let experiment = oracle_experiment();
        let run = AdaptiveRun::new(cfg, experiment.clone()).unwrap();
        let truth = truth_set(&experiment, 10, 1).unwrap();
        assert!(evaluate_against_truth(&run, &truth).is_err());
        assert!(matches!(
            evaluate_against_truth(&run, &LabeledSamples::new(vec![], vec![], vec![]).unwrap()),
            Err(Error::EmptyTruth)
        ));
    }

    #[test]
    fn more_iterations_do_not_degrade_the_posterior() {
        // Smooth target, fixed kernel: the batches can only add
        // information. Mean absolute posterior error on a held-out truth
        // set, averaged over seeds, must not get worse with iterations.
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../experiments");
        let experiment =
            crate::experiment::load_experiment(format!("{dir}/norrebro.experiment")).unwrap();
        let truth = truth_set(&experiment, 100, 424242).unwrap();
        let hyper = Hyper::Fixed(KernelParams {
            signal_variance: 1.0,
            length_scales: vec![0.3, 0.3, 0.3],
            noise_variance: 1e-6,
        });
        let mae = |run: &AdaptiveRun| {
            let post = run
                .state
                .final_gp
                .as_ref()
                .unwrap()
                .predict(&truth.points)
                .unwrap();
            post.mean
                .iter()
                .zip(&truth.outputs)
                .map(|(m, y)| (m - y).abs())
                .sum::<f64>()
                / truth.len() as f64
        };
        let mut before = 0.0;
        let mut after = 0.0;
        for seed_value in 0..10u64 {
            let base = AdaptiveConfig {
                n_init: 20,
                pool_size: 100,
                n_iter: 0,
                batch: 2,
                mode: AdaptiveMode::InteriorOrBorder,
                interior_prob: 0.5,
                prim: PrimConfig::default(),
                hyper: hyper.clone(),
                seed: seed_value,
            };
            let mut refined = base.clone();
            refined.n_iter = 8;
            before += mae(&run_adaptive(base, experiment.clone()).unwrap());
            after += mae(&run_adaptive(refined, experiment.clone()).unwrap());
        }
        assert!(
            after <= before,
            "mean error grew from {} to {}",
            before / 10.0,
            after / 10.0
        );
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let experiment = oracle_experiment();
        let mut cfg = fast_cfg(1, AdaptiveMode::InteriorOrBorder);
        cfg.pool_size = cfg.n_init * 4;
        assert!(AdaptiveRun::new(cfg, experiment.clone()).is_err());

        let mut cfg = fast_cfg(1, AdaptiveMode::InteriorOrBorder);
        cfg.batch = 0;
        assert!(AdaptiveRun::new(cfg, experiment.clone()).is_err());

        let mut cfg = fast_cfg(1, AdaptiveMode::InteriorOrBorder);
        cfg.interior_prob = 1.5;
        assert!(AdaptiveRun::new(cfg, experiment).is_err());
    }

    #[test]
    fn history_jsonl_is_one_record_per_line() {
        let cfg = fast_cfg(6, AdaptiveMode::InteriorOrBorder);
        let run = run_adaptive(cfg, oracle_experiment()).unwrap();
        let mut buf = Vec::new();
        write_history_jsonl(&run.state.history, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), run.state.history.len());
        for (line, record) in lines.iter().zip(&run.state.history) {
            let parsed: IterationRecord = serde_json::from_str(line).unwrap();
            assert_eq!(&parsed, record);
        }
    }
}
