//! Mini-batch Adam on the mean episode gradient.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_split, Dataset, Scenario, Split, TrainerError};
use crate::kinematics::VehicleParams;
use crate::loss::{LossBreakdown, LossConfig, DEFAULT_GAMMA};
use crate::policy::{adam_step, save_checkpoint, AdamState, ArchConfig, Episode, PolicyParams};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_DIR: &str = "best";
pub const LAST_DIR: &str = "last";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_segments: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Optimizer steps after which the learning rate has halved; constant
    /// when unset.
    pub lr_half_life: Option<f64>,
    pub gamma: f64,
    pub tcurv_enabled: bool,
    pub angle_weight: f64,
    /// Training targets: factors on the goal tolerances and on the curvature
    /// bound inside the loss hinges. Feasibility is always judged on the
    /// true limits.
    pub tolerance_scale: f64,
    pub curvature_scale: f64,
    /// Seeds parameter initialization and mini-batch shuffling.
    pub seed: u64,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_segments: 6,
            epochs: 100,
            batch_size: 128,
            lr: 1e-4,
            lr_half_life: None,
            gamma: DEFAULT_GAMMA,
            tcurv_enabled: true,
            angle_weight: 1.0,
            tolerance_scale: 1.0,
            curvature_scale: 1.0,
            seed: 0,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            angle_weight: self.angle_weight,
            tcurv_enabled: self.tcurv_enabled,
            tolerance_scale: self.tolerance_scale,
            curvature_scale: self.curvature_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub accuracy: f64,
    pub loss: LossBreakdown,
    pub mean_turn: f64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: SplitSummary,
    pub val: Option<SplitSummary>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub final_params: Vec<f64>,
}

impl TrainSummary {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.checked_sub(1).map(|i| &self.epochs[i])
    }
}

fn summary(
    params: &PolicyParams,
    dataset: &Dataset,
    list: &[Scenario],
    vehicle: &VehicleParams,
    config: &TrainConfig,
) -> Result<SplitSummary, TrainerError> {
    let m = evaluate_split(params, dataset, list, vehicle, config.n_segments, config.loss_config())?;
    Ok(SplitSummary {
        accuracy: m.accuracy,
        loss: m.loss,
        mean_turn: m.mean_turn,
    })
}

/// Ranks epochs by validation accuracy, then lower validation loss; falls
/// back to the training split without a validation split.
fn score(r: &EpochRecord) -> (f64, f64) {
    let s = r.val.as_ref().unwrap_or(&r.train);
    (s.accuracy, -s.loss.total)
}

/// Trains a freshly initialized policy. Writes `metrics.jsonl`, the
/// best-on-validation checkpoint under `best/` and the latest under `last/`.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    vehicle: &VehicleParams,
    out: &Path,
) -> Result<TrainSummary, TrainerError> {
    let train_set = dataset.split(Split::Train);
    if train_set.is_empty() {
        return Err(TrainerError::Invalid("empty training split".into()));
    }
    if config.batch_size == 0 {
        return Err(TrainerError::Invalid("batch size must be positive".into()));
    }
    let val_set = dataset.split(Split::Val);
    fs::create_dir_all(out)?;
    let mut log = fs::File::create(out.join(METRICS_FILE))?;

    let mut params = PolicyParams::init(&config.arch, config.seed);
    let mut adam = AdamState::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let loss = config.loss_config();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; params.len()];
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best_epoch = 0;
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                let ep = Episode {
                    grid: dataset.grid(s),
                    ref_path: &s.ref_path,
                    vehicle: *vehicle,
                    q0: s.q0,
                    goal: s.goal.region(),
                };
                params.accumulate_gradient(&ep, config.n_segments, loss, w, &mut grad)?;
            }
            if grad.iter().any(|g| !g.is_finite()) {
                log::error!("non-finite gradient in epoch {epoch}");
                return Err(TrainerError::NonFiniteGradient { epoch });
            }
            let lr = match config.lr_half_life {
                Some(h) if h > 0.0 => config.lr * 0.5f64.powf(step as f64 / h),
                _ => config.lr,
            };
            adam_step(&mut params.values, &grad, &mut adam, lr);
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            train: summary(&params, dataset, train_set, vehicle, config)?,
            val: if val_set.is_empty() {
                None
            } else {
                Some(summary(&params, dataset, val_set, vehicle, config)?)
            },
            seconds: started.elapsed().as_secs_f64(),
        };
        serde_json::to_writer(&mut log, &record)?;
        log.write_all(b"\n")?;
        log.flush()?;
        log::info!(
            "epoch {epoch}: train acc {:.3} loss {:.4}, val acc {:?}",
            record.train.accuracy,
            record.train.loss.total,
            record.val.as_ref().map(|v| v.accuracy)
        );
        save_checkpoint(&out.join(LAST_DIR), &params, Some(config.n_segments))?;
        if best_epoch == 0 || score(&record) > score(&records[best_epoch - 1]) {
            best_epoch = epoch;
            save_checkpoint(&out.join(BEST_DIR), &params, Some(config.n_segments))?;
        }
        records.push(record);
    }
    if records.is_empty() {
        save_checkpoint(&out.join(BEST_DIR), &params, Some(config.n_segments))?;
        save_checkpoint(&out.join(LAST_DIR), &params, Some(config.n_segments))?;
    }
    Ok(TrainSummary {
        epochs: records,
        best_epoch,
        final_params: params.values,
    })
}
