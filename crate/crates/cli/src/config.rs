//! Run configuration: flags merged over an optional TOML file.
//!
//! The file uses the flag names (kebab-case) as keys, flat or under a table
//! named after the subcommand. Flags given on the command line win.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use nsplan::kinematics::Configuration;
use nsplan::loss::GoalRegion;
use serde::Deserialize;

pub const DEFAULT_N_SEGMENTS: usize = 6;
pub const DEFAULT_BUDGET_MS: f64 = 50.0;
pub const DEFAULT_REPEATS: usize = 100;
pub const DEFAULT_SCALE: u32 = 4;
pub const DEFAULT_GOAL_STEP: f64 = 1.0;
pub const DEFAULT_HEADINGS: usize = 8;
/// Budgets of the accuracy-vs-time curve.
pub const CURVE_BUDGETS_MS: [f64; 5] = [10.0, 20.0, 50.0, 100.0, 1000.0];

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct Opts {
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Map image (plan, reachable) or directory of source maps (gendata).
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Dataset directory (train, eval).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Start configuration "beta,theta,x,y" [default: 0,0,0,0].
    #[arg(long, allow_hyphen_values = true)]
    pub q0: Option<String>,
    /// Goal pose "theta,x,y".
    #[arg(long, allow_hyphen_values = true)]
    pub qk: Option<String>,
    /// Segments per rollout [default: checkpoint's, else 6].
    #[arg(long)]
    pub n_segments: Option<usize>,
    /// Checkpoint directory, or a training output directory holding best/.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Seed for every random choice [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Planning-time budget in milliseconds [default: 50].
    #[arg(long)]
    pub budget_ms: Option<f64>,
    /// Output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset split to evaluate [default: test].
    #[arg(long)]
    pub split: Option<String>,
    /// Render the planned path to this PNG (plan).
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Timed repetitions of the rollout (plan) [default: 100].
    #[arg(long)]
    pub repeats: Option<usize>,
    /// PNG upscale factor [default: 4].
    #[arg(long)]
    pub scale: Option<u32>,
    /// Goal grid spacing in meters (reachable) [default: 1.0].
    #[arg(long)]
    pub goal_step: Option<f64>,
    /// Goal headings per cell (reachable) [default: 8].
    #[arg(long)]
    pub headings: Option<usize>,
    /// Training scenarios (gendata) [default: 500].
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Validation scenarios (gendata) [default: 100].
    #[arg(long)]
    pub val_count: Option<usize>,
    /// Test scenarios (gendata) [default: 100].
    #[arg(long)]
    pub test_count: Option<usize>,
    /// Scenarios per local map (gendata) [default: 5].
    #[arg(long)]
    pub scenarios_per_map: Option<usize>,
    /// Maximum random obstacles per local map (gendata) [default: 15].
    #[arg(long)]
    pub obstacles: Option<usize>,
    /// Lattice node budget per reference plan (gendata) [default: 2000].
    #[arg(long)]
    pub node_budget: Option<usize>,
    /// Training epochs [default: 100].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-4].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Optimizer steps per halving of the learning rate [default: constant].
    #[arg(long)]
    pub lr_half_life: Option<f64>,
    /// Weight of the heading error in the overshoot term [default: 1].
    #[arg(long)]
    pub angle_weight: Option<f64>,
    /// Factor on the goal tolerances inside the training loss [default: 1].
    #[arg(long)]
    pub tolerance_scale: Option<f64>,
    /// Factor on the curvature bound inside the training loss [default: 1].
    #[arg(long)]
    pub curvature_scale: Option<f64>,
    /// Weight of the total-curvature term [default: 1e-4].
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Drop the total-curvature term from the loss (ablation).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_tcurv: Option<bool>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Opts {
    /// Fills options missing on the command line from the config file.
    pub fn resolve(mut self, section: &str) -> Result<Opts> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let file = load_file(&path, section)?;
        overlay!(
            self, file, map, dataset, q0, qk, n_segments, checkpoint, seed, budget_ms, out, split, png, repeats,
            scale, goal_step, headings, train_count, val_count, test_count, scenarios_per_map, obstacles,
            node_budget, epochs, batch_size, lr, lr_half_life, angle_weight, tolerance_scale, curvature_scale, gamma, no_tcurv
        );
        Ok(self)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn budget_ms(&self) -> f64 {
        self.budget_ms.unwrap_or(DEFAULT_BUDGET_MS)
    }

    pub fn scale(&self) -> u32 {
        self.scale.unwrap_or(DEFAULT_SCALE).max(1)
    }

    pub fn q0(&self) -> Result<Configuration> {
        match &self.q0 {
            None => Ok(Configuration::default()),
            Some(s) => {
                let [beta, theta, x, y] = parse_list::<4>(s, "q0")?;
                Ok(Configuration::new(beta, theta, x, y))
            }
        }
    }

    pub fn qk(&self) -> Result<GoalRegion> {
        let s = self.qk.as_deref().context("missing --qk \"theta,x,y\"")?;
        let [theta, x, y] = parse_list::<3>(s, "qk")?;
        Ok(GoalRegion::new(x, y, theta))
    }

    pub fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value.as_ref().with_context(|| format!("missing --{flag}"))
    }
}

fn load_file(path: &Path, section: &str) -> Result<Opts> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let scoped = match table.remove(section) {
        Some(toml::Value::Table(t)) => Some(t),
        Some(_) => bail!("config section [{section}] must be a table"),
        None => None,
    };
    // drop the other subcommands' sections
    table.retain(|_, v| !v.is_table());
    if let Some(t) = scoped {
        table.extend(t);
    }
    Opts::deserialize(toml::Value::Table(table)).with_context(|| format!("invalid config {}", path.display()))
}

fn parse_list<const K: usize>(s: &str, name: &str) -> Result<[f64; K]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("--{name}: expected {K} comma-separated numbers, got {s:?}"))?;
    match <[f64; K]>::try_from(parts) {
        Ok(a) if a.iter().all(|v| v.is_finite()) => Ok(a),
        _ => bail!("--{name}: expected {K} finite comma-separated numbers, got {s:?}"),
    }
}
