//! Dataset generation, weakly supervised training of the policy on the
//! feasibility loss, and split evaluation.

mod dataset;
mod train;

pub use dataset::{
    generate_dataset, load_source_maps, Dataset, DatasetMeta, GenConfig, GoalPose, MapInfo, Scenario, Split,
    SplitStats, TimingReport, GENERATION_BUDGET, MAX_GOAL_TURN, MIN_GOAL_DISTANCE, REF_PATH_SPACING,
};
pub use train::{train, EpochRecord, SplitSummary, TrainConfig, TrainSummary, BEST_DIR, LAST_DIR, METRICS_FILE};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::GridError;
use crate::kinematics::VehicleParams;
use crate::loss::{is_feasible, LossBreakdown, LossConfig, LossContext, total_loss_with};
use crate::policy::{CheckpointError, PolicyError, PolicyParams};
use crate::spline::{discretize, SplineError};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("non-finite gradient in epoch {epoch}; last good checkpoint kept")]
    NonFiniteGradient { epoch: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub count: usize,
    /// Fraction of scenarios whose rollout is feasible.
    pub accuracy: f64,
    /// Mean absolute heading change along the discretized paths, radians.
    pub mean_turn: f64,
    pub mean_length: f64,
    /// Rollout (inference) time statistics in milliseconds.
    pub mean_time_ms: f64,
    pub std_time_ms: f64,
    pub loss: LossBreakdown,
}

/// Result of one scenario's rollout.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub feasible: bool,
    pub turn: f64,
    pub length: f64,
    pub time_ms: f64,
    pub loss: LossBreakdown,
}

pub fn evaluate_scenario(
    params: &PolicyParams,
    dataset: &Dataset,
    s: &Scenario,
    vehicle: &VehicleParams,
    n_segments: usize,
    loss: LossConfig,
) -> Result<ScenarioOutcome, TrainerError> {
    let grid = dataset.grid(s);
    let goal = s.goal.region();
    let t = Instant::now();
    let r = params.rollout(grid, vehicle, &s.q0, &goal, n_segments)?;
    let time_ms = t.elapsed().as_secs_f64() * 1e3;
    let d = discretize(&r.path);
    let ctx = LossContext::new(grid, vehicle, &s.ref_path, goal, loss);
    Ok(ScenarioOutcome {
        feasible: is_feasible(&r.path, grid, vehicle, &goal),
        turn: d.accumulated_turn(),
        length: d.length(),
        time_ms,
        loss: total_loss_with(&r.path, &ctx),
    })
}

/// Accuracy, path shape and timing of the policy on a list of scenarios.
pub fn evaluate_split(
    params: &PolicyParams,
    dataset: &Dataset,
    scenarios: &[Scenario],
    vehicle: &VehicleParams,
    n_segments: usize,
    loss: LossConfig,
) -> Result<EvalMetrics, TrainerError> {
    let outcomes = scenarios
        .iter()
        .map(|s| evaluate_scenario(params, dataset, s, vehicle, n_segments, loss))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(&outcomes))
}

pub fn summarize(outcomes: &[ScenarioOutcome]) -> EvalMetrics {
    let n = outcomes.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ScenarioOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    let mean_time = mean(&|o| o.time_ms);
    let var = mean(&|o| (o.time_ms - mean_time).powi(2));
    let losses: Vec<LossBreakdown> = outcomes.iter().map(|o| o.loss).collect();
    EvalMetrics {
        count: outcomes.len(),
        accuracy: mean(&|o| o.feasible as u8 as f64),
        mean_turn: mean(&|o| o.turn),
        mean_length: mean(&|o| o.length),
        mean_time_ms: mean_time,
        std_time_ms: var.sqrt(),
        loss: LossBreakdown::mean(&losses),
    }
}
