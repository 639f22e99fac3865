//! Run records, their persisted artifacts, and the state machine.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use sdforge_core::adaptive::{AdaptiveConfig, AdaptiveRun, IterationRecord};
use sdforge_core::cart::{self, CartConfig, TreeNode};
use sdforge_core::experiment::ExperimentConfig;
use sdforge_core::prim::{
    self, BoxStats, LabeledSamples, PeelingTrajectory, PrimConfig, ScenarioBox, SelectCriterion,
};
use sdforge_core::{sampling, seed, simulator, Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Prim,
    Cart,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Created,
    Sampling,
    Ready,
    AwaitingSelection,
    Stepping,
    Done,
    Failed,
}

/// Creation-time knobs; anything omitted falls back to the experiment file
/// or module defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunParams {
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub prim: Option<PrimConfig>,
    pub cart: Option<CartConfig>,
    pub max_boxes: Option<usize>,
    pub stop_coverage: Option<f64>,
    pub adaptive: Option<AdaptiveConfig>,
}

/// One selected box, flattened for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub round: usize,
    #[serde(flatten)]
    pub scenario_box: ScenarioBox,
    #[serde(flatten)]
    pub stats: BoxStats,
    pub cumulative_coverage: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Artifacts {
    /// Simulated points for prim/cart runs; adaptive runs keep theirs in
    /// the embedded run.
    pub data: Option<LabeledSamples>,
    /// Indices into `data` still unclaimed by a selected box.
    pub residual: Vec<usize>,
    pub covered_vulnerable: usize,
    pub trajectories: Vec<PeelingTrajectory>,
    pub boxes: Vec<BoxRecord>,
    pub tree: Option<TreeArtifact>,
    pub adaptive: Option<AdaptiveRun>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeArtifact {
    pub unpruned: TreeNode,
    pub pruned: TreeNode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub run_id: Uuid,
    pub kind: RunKind,
    pub state: RunState,
    pub experiment: ExperimentConfig,
    pub params: RunParams,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub error: Option<String>,
    pub artifacts: Artifacts,
}

impl RunRecord {
    pub fn new(kind: RunKind, experiment: ExperimentConfig, params: RunParams) -> Self {
        let now = Utc::now();
        RunRecord {
            schema_version: SCHEMA_VERSION,
            run_id: Uuid::new_v4(),
            kind,
            state: RunState::Created,
            experiment,
            params,
            created_at: now,
            updated_at: now,
            error: None,
            artifacts: Artifacts::default(),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.params.seed.unwrap_or(self.experiment.seed)
    }

    pub fn touch(&mut self) {
        self.updated_at = Utc::now();
    }

    pub fn prim_config(&self) -> PrimConfig {
        self.params.prim.clone().unwrap_or_default()
    }

    fn sample_size(&self) -> usize {
        self.params.n.unwrap_or(self.experiment.n_scenarios as usize)
    }

    pub fn max_boxes(&self) -> usize {
        self.params.max_boxes.unwrap_or(prim::DEFAULT_MAX_BOXES)
    }

    pub fn stop_coverage(&self) -> f64 {
        self.params.stop_coverage.unwrap_or(prim::DEFAULT_STOP_COVERAGE)
    }

    pub fn total_vulnerable(&self) -> usize {
        self.artifacts
            .data
            .as_ref()
            .map_or(0, LabeledSamples::n_vulnerable)
    }

    pub fn cumulative_coverage(&self) -> f64 {
        let total = self.total_vulnerable();
        if total == 0 {
            0.0
        } else {
            self.artifacts.covered_vulnerable as f64 / total as f64
        }
    }

    /// Simulates the initial design and, per kind, either fits the first
    /// PRIM trajectory, the full tree, or the adaptive run's initial state.
    /// Runs on the blocking pool.
    pub fn initialize(&mut self) -> Result<()> {
        self.params.prim.as_ref().map_or(Ok(()), PrimConfig::validate)?;
        self.params.cart.as_ref().map_or(Ok(()), CartConfig::validate)?;
        match self.kind {
            RunKind::Prim | RunKind::Cart => {
                let m = sampling::lhs_with(
                    &self.experiment.space,
                    self.sample_size(),
                    &mut seed::rng(self.root_seed(), "sample", 0),
                );
                let outcomes = simulator::evaluate_matrix(&self.experiment, &m)?;
                let data = LabeledSamples::from_outcomes(&m, &outcomes, &self.experiment.rule);
                self.artifacts.residual = (0..data.len()).collect();
                self.artifacts.data = Some(data);
                if self.kind == RunKind::Prim {
                    self.peel_next_round()?;
                    self.state = RunState::AwaitingSelection;
                } else {
                    let data = self.artifacts.data.as_ref().expect("just set");
                    let cfg = self.params.cart.unwrap_or_default();
                    let unpruned = cart::grow(data, &cfg)?;
                    let pruned = cart::prune(&unpruned);
                    let leaves = cart::leaves_to_boxes(&pruned, &self.experiment.space, data);
                    self.artifacts.boxes = leaves
                        .into_iter()
                        .enumerate()
                        .map(|(i, (scenario_box, stats))| BoxRecord {
                            round: i,
                            scenario_box,
                            stats,
                            cumulative_coverage: 0.0,
                        })
                        .collect();
                    let mut covered = 0usize;
                    let total = self.total_vulnerable();
                    for record in &mut self.artifacts.boxes {
                        covered += record.stats.n_vulnerable_inside;
                        record.cumulative_coverage = if total == 0 {
                            0.0
                        } else {
                            covered as f64 / total as f64
                        };
                    }
                    self.artifacts.covered_vulnerable = covered;
                    self.artifacts.tree = Some(TreeArtifact { unpruned, pruned });
                    self.state = RunState::Done;
                }
            }
            RunKind::Adaptive => {
                let mut cfg = self.params.adaptive.clone().unwrap_or_default();
                if self.params.adaptive.as_ref().is_none_or(|a| a.seed == 0) {
                    cfg.seed = self.root_seed();
                }
                let run = AdaptiveRun::new(cfg, self.experiment.clone())?;
                self.artifacts.adaptive = Some(run);
                self.state = RunState::Ready;
            }
        }
        Ok(())
    }

    /// Peels a fresh trajectory on the residual data and appends it.
    fn peel_next_round(&mut self) -> Result<()> {
        let data = self.artifacts.data.as_ref().ok_or(Error::EmptyData)?;
        let round_data = data.subset(&self.artifacts.residual);
        let traj = prim::peel(
            &round_data,
            &self.prim_config(),
            &self.experiment.space,
            &ScenarioBox::full(self.experiment.space.k()),
        )?;
        self.artifacts.trajectories.push(traj);
        Ok(())
    }

    /// Records the analyst's step choice for the current round.
    pub fn select(&mut self, step_index: usize) -> Result<&BoxRecord> {
        let round = self.artifacts.trajectories.len().saturating_sub(1);
        let traj = self
            .artifacts
            .trajectories
            .last_mut()
            .ok_or(Error::EmptyData)?;
        let idx = prim::select_box(traj, SelectCriterion::Index(step_index), 0.0)?;
        traj.selected_index = Some(idx);
        let step = &traj.steps[idx];
        let record = BoxRecord {
            round,
            scenario_box: step.scenario_box.clone(),
            stats: step.stats,
            cumulative_coverage: 0.0,
        };
        self.artifacts.covered_vulnerable += record.stats.n_vulnerable_inside;
        self.artifacts.boxes.push(record);
        let cumulative = self.cumulative_coverage();
        let record = self.artifacts.boxes.last_mut().expect("just pushed");
        record.cumulative_coverage = cumulative;
        self.state = RunState::Stepping;
        Ok(self.artifacts.boxes.last().expect("just pushed"))
    }

    /// Drops the selected box's points from the residual and either starts
    /// the next round or finishes the run. Returns how many points the box
    /// claimed. Runs on the blocking pool.
    pub fn cover_next(&mut self) -> Result<usize> {
        let selected = self
            .artifacts
            .boxes
            .last()
            .ok_or(Error::EmptyData)?
            .scenario_box
            .clone();
        let data = self.artifacts.data.as_ref().ok_or(Error::EmptyData)?;
        let before = self.artifacts.residual.len();
        self.artifacts
            .residual
            .retain(|&i| !selected.contains(&data.points[i]));
        let removed = before - self.artifacts.residual.len();

        let residual_vulnerable = self
            .artifacts
            .residual
            .iter()
            .filter(|&&i| data.labels[i])
            .count();
        let budget_spent = self.artifacts.boxes.len() >= self.max_boxes();
        let covered_enough = self.cumulative_coverage() >= self.stop_coverage();
        if residual_vulnerable == 0 || budget_spent || covered_enough {
            self.state = RunState::Done;
        } else {
            self.peel_next_round()?;
            self.state = RunState::AwaitingSelection;
        }
        Ok(removed)
    }

    /// Advances up to `n` adaptive iterations (clamped to what remains) and
    /// finalizes when the budget is exhausted. Runs on the blocking pool.
    pub fn adaptive_step(&mut self, n: usize) -> Result<Vec<IterationRecord>> {
        let run = self
            .artifacts
            .adaptive
            .as_mut()
            .ok_or_else(|| Error::InvalidConfig("not an adaptive run".into()))?;
        let steps = n.min(run.remaining());
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            records.push(run.step()?);
        }
        if run.remaining() == 0 {
            run.finalize()?;
            self.artifacts.boxes = run
                .state
                .final_boxes
                .iter()
                .enumerate()
                .map(|(i, entry)| BoxRecord {
                    round: i,
                    scenario_box: entry.scenario_box.clone(),
                    stats: entry.stats,
                    cumulative_coverage: entry.cumulative_coverage,
                })
                .collect();
            self.artifacts.trajectories = run
                .state
                .final_boxes
                .iter()
                .map(|entry| entry.trajectory.clone())
                .collect();
            self.state = RunState::Done;
        } else {
            self.state = RunState::Ready;
        }
        Ok(records)
    }

    /// Whether a point belongs to the run's current box overlay: the
    /// latest selection for prim, any vulnerable leaf for cart, the final
    /// covering (or latest proposal) for adaptive.
    pub fn in_box(&self, point: &[f64]) -> bool {
        match self.kind {
            RunKind::Prim => self
                .artifacts
                .boxes
                .last()
                .is_some_and(|r| r.scenario_box.contains(point)),
            RunKind::Cart => self
                .artifacts
                .boxes
                .iter()
                .any(|r| r.scenario_box.contains(point)),
            RunKind::Adaptive => {
                if !self.artifacts.boxes.is_empty() {
                    self.artifacts
                        .boxes
                        .iter()
                        .any(|r| r.scenario_box.contains(point))
                } else {
                    self.artifacts
                        .adaptive
                        .as_ref()
                        .and_then(|run| run.state.history.last())
                        .is_some_and(|r| r.selected_box.contains(point))
                }
            }
        }
    }

    pub fn point_data(&self) -> Option<&LabeledSamples> {
        match self.kind {
            RunKind::Prim | RunKind::Cart => self.artifacts.data.as_ref(),
            RunKind::Adaptive => self.artifacts.adaptive.as_ref().map(|r| &r.state.dataset),
        }
    }
}
