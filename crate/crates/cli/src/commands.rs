use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use nsplan::gridmap::{cell_center, world_to_cell, FootprintChecker, OccupancyGrid, GRID_SIZE};
use nsplan::kinematics::{curvature_limit, Configuration, VehicleParams};
use nsplan::lattice::{LatticeConfig, LatticePlanner};
use nsplan::loss::{is_feasible, total_loss_with, GoalRegion, LossBreakdown, LossConfig, LossContext, DEFAULT_GAMMA};
use nsplan::policy::{load_checkpoint, PolicyParams, Rollout, MANIFEST_FILE};
use nsplan::spline::{discretize, endpoint_configuration_unchecked, DiscretizedPath, PathSpline, SegmentSpec};
use nsplan::trainer::{
    evaluate_scenario, generate_dataset, load_source_maps, summarize, train, Dataset, EvalMetrics, GenConfig, Split,
    TrainConfig, BEST_DIR,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Opts, CURVE_BUDGETS_MS, DEFAULT_GOAL_STEP, DEFAULT_HEADINGS, DEFAULT_N_SEGMENTS, DEFAULT_REPEATS};
use crate::render;

/// Outcome of a subcommand that ran to completion.
pub enum Status {
    Ok,
    Infeasible,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// A checkpoint directory, or a training run directory containing `best/`.
pub fn load_policy(path: &Path) -> Result<(PolicyParams, Option<usize>)> {
    let dir = if path.join(MANIFEST_FILE).exists() {
        path.to_path_buf()
    } else {
        path.join(BEST_DIR)
    };
    let (params, manifest) =
        load_checkpoint(&dir).with_context(|| format!("loading checkpoint {}", path.display()))?;
    Ok((params, manifest.n_segments))
}

fn n_segments(o: &Opts, trained: Option<usize>) -> usize {
    o.n_segments.or(trained).unwrap_or(DEFAULT_N_SEGMENTS)
}

/// SHA-256 over every dataset file except the wall-clock timing report,
/// keyed by relative path.
pub fn dataset_hash(root: &Path) -> Result<String> {
    fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                collect(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    collect(root, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == "timing.json" {
            continue;
        }
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(fs::read(&f)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

pub fn gendata(o: &Opts) -> Result<Status> {
    let dir = Opts::require(&o.map, "map")?;
    if !dir.is_dir() {
        bail!("map directory {} does not exist", dir.display());
    }
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("dataset"));
    let d = GenConfig::default();
    let config = GenConfig {
        train: o.train_count.unwrap_or(d.train),
        val: o.val_count.unwrap_or(d.val),
        test: o.test_count.unwrap_or(d.test),
        scenarios_per_map: o.scenarios_per_map.unwrap_or(d.scenarios_per_map),
        obstacle_count_max: o.obstacles.unwrap_or(d.obstacle_count_max),
        seed: o.seed(),
        budget: o.node_budget.unwrap_or(d.budget),
    };
    let sources = load_source_maps(dir)?;
    let (meta, timing) = generate_dataset(&sources, &config, &VehicleParams::kia_rio(), &out)?;
    let report = serde_json::json!({
        "out": out,
        "hash": dataset_hash(&out)?,
        "splits": meta.splits,
        "maps": meta.maps.len(),
        "timing": timing,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Status::Ok)
}

pub fn train_cmd(o: &Opts) -> Result<Status> {
    let root = Opts::require(&o.dataset, "dataset")?;
    let vehicle = VehicleParams::kia_rio();
    let dataset = Dataset::load(root, &vehicle).with_context(|| format!("loading dataset {}", root.display()))?;
    let d = TrainConfig::default();
    let config = TrainConfig {
        n_segments: o.n_segments.unwrap_or(d.n_segments),
        epochs: o.epochs.unwrap_or(d.epochs),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        lr: o.lr.unwrap_or(d.lr),
        lr_half_life: o.lr_half_life.or(d.lr_half_life),
        angle_weight: o.angle_weight.unwrap_or(d.angle_weight),
        tolerance_scale: o.tolerance_scale.unwrap_or(d.tolerance_scale),
        curvature_scale: o.curvature_scale.unwrap_or(d.curvature_scale),
        gamma: o.gamma.unwrap_or(d.gamma),
        tcurv_enabled: !o.no_tcurv.unwrap_or(false),
        seed: o.seed(),
        ..d
    };
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let summary = train(&dataset, &config, &vehicle, &out)?;
    write_json(&out.join("train_config.json"), &config)?;
    for r in &summary.epochs {
        println!(
            "epoch {:>4}  train acc {:.3} loss {:.4}  val acc {}  {:.1}s",
            r.epoch,
            r.train.accuracy,
            r.train.loss.total,
            r.val.as_ref().map_or("-".into(), |v| format!("{:.3}", v.accuracy)),
            r.seconds
        );
    }
    if let Some(b) = summary.best() {
        println!("best epoch {} (train acc {:.3})", b.epoch, b.train.accuracy);
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
struct PlanReport {
    feasible: bool,
    reason: Option<&'static str>,
    n_segments: usize,
    specs: Vec<SegmentSpec>,
    endpoint: Configuration,
    loss: LossBreakdown,
    time_ms_mean: f64,
    time_ms_std: f64,
    repeats: usize,
    deterministic: bool,
    samples: DiscretizedPath,
}

/// First violated feasibility requirement of a path.
pub fn failure_reason(path: &PathSpline, grid: &OccupancyGrid, vehicle: &VehicleParams, goal: &GoalRegion) -> Option<&'static str> {
    let d = discretize(path);
    let checker = FootprintChecker::new(vehicle);
    let kmax = curvature_limit(vehicle);
    if d.samples().any(|s| checker.collides(grid, s.pose())) {
        return Some("collision");
    }
    if d.max_abs_curvature() > kmax {
        return Some("curvature");
    }
    let end = endpoint_configuration_unchecked(path, vehicle);
    (!goal.contains(end.x, end.y, end.theta)).then_some("overshoot")
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// Times `repeats` rollouts; returns the first one, the timings and whether
/// every repetition produced the same segments.
pub fn timed_rollouts(
    params: &PolicyParams,
    grid: &OccupancyGrid,
    vehicle: &VehicleParams,
    q0: &Configuration,
    goal: &GoalRegion,
    n: usize,
    repeats: usize,
) -> Result<(Rollout, Vec<f64>, bool)> {
    let mut times = Vec::with_capacity(repeats);
    let mut first: Option<Rollout> = None;
    let mut same = true;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let r = params.rollout(grid, vehicle, q0, goal, n)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
        match &first {
            Some(f) => same &= f.specs == r.specs,
            None => first = Some(r),
        }
    }
    Ok((first.expect("at least one rollout"), times, same))
}

pub fn plan(o: &Opts) -> Result<Status> {
    let map = Opts::require(&o.map, "map")?;
    let grid = OccupancyGrid::load(map).with_context(|| format!("loading map {}", map.display()))?;
    let (params, trained) = load_policy(Opts::require(&o.checkpoint, "checkpoint")?)?;
    let n = n_segments(o, trained);
    let q0 = o.q0()?;
    let goal = o.qk()?;
    let vehicle = VehicleParams::kia_rio();
    let repeats = o.repeats.unwrap_or(DEFAULT_REPEATS).max(1);
    let (r, times, deterministic) = timed_rollouts(&params, &grid, &vehicle, &q0, &goal, n, repeats)?;
    let (time_ms_mean, time_ms_std) = mean_std(&times);

    // no reference path exists here; the start-goal chord stands in for it
    let chord = [[q0.x, q0.y], [goal.x, goal.y]];
    let ctx = LossContext::new(&grid, &vehicle, &chord, goal, LossConfig::default());
    let feasible = is_feasible(&r.path, &grid, &vehicle, &goal);
    let reason = if feasible {
        None
    } else {
        Some(failure_reason(&r.path, &grid, &vehicle, &goal).unwrap_or("overshoot"))
    };
    let samples = discretize(&r.path);
    let report = PlanReport {
        feasible,
        reason,
        n_segments: n,
        specs: r.specs.clone(),
        endpoint: endpoint_configuration_unchecked(&r.path, &vehicle),
        loss: total_loss_with(&r.path, &ctx),
        time_ms_mean,
        time_ms_std,
        repeats,
        deterministic,
        samples,
    };
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("plan.json"));
    write_json(&out, &report)?;
    if let Some(png) = &o.png {
        let scale = o.scale();
        let mut img = render::map_image(&grid, scale);
        render::draw_path(&mut img, &report.samples, &vehicle, scale);
        render::draw_goal(&mut img, [goal.x, goal.y], goal.theta, scale);
        img.save(png).with_context(|| format!("writing {}", png.display()))?;
    }
    println!(
        "feasible={} reason={} time_ms={:.3}±{:.3} (n={}) loss={:.5}",
        feasible,
        reason.unwrap_or("none"),
        time_ms_mean,
        time_ms_std,
        repeats,
        report.loss.total
    );
    Ok(if feasible { Status::Ok } else { Status::Infeasible })
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub budget_ms: f64,
    pub policy: f64,
    pub lattice: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub n_segments: usize,
    pub budget_ms: f64,
    pub policy: EvalMetrics,
    pub policy_accuracy: f64,
    pub lattice_accuracy: f64,
    pub curve: Vec<CurvePoint>,
    /// Planning time of every solved lattice scenario, ms.
    pub lattice_times_ms: Vec<Option<f64>>,
}

/// Fraction of runs that succeeded strictly within the budget.
pub fn accuracy_within(times: &[Option<f64>], budget_ms: f64) -> f64 {
    let ok = times.iter().filter(|t| t.is_some_and(|t| t < budget_ms)).count();
    ok as f64 / times.len().max(1) as f64
}

pub fn eval(o: &Opts) -> Result<Status> {
    let root = Opts::require(&o.dataset, "dataset")?;
    let vehicle = VehicleParams::kia_rio();
    let dataset = Dataset::load(root, &vehicle).with_context(|| format!("loading dataset {}", root.display()))?;
    let split: Split = o.split.as_deref().unwrap_or("test").parse().map_err(anyhow::Error::msg)?;
    let scenarios = dataset.split(split);
    if scenarios.is_empty() {
        bail!("split {} is empty", split.name());
    }
    let (params, trained) = load_policy(Opts::require(&o.checkpoint, "checkpoint")?)?;
    let n = n_segments(o, trained);
    let budget = o.budget_ms();
    let loss = LossConfig {
        gamma: o.gamma.unwrap_or(DEFAULT_GAMMA),
        tcurv_enabled: !o.no_tcurv.unwrap_or(false),
        angle_weight: o.angle_weight.unwrap_or(1.0),
        ..LossConfig::default()
    };

    let outcomes = scenarios
        .iter()
        .map(|s| evaluate_scenario(&params, &dataset, s, &vehicle, n, loss))
        .collect::<Result<Vec<_>, _>>()?;
    let policy_times: Vec<Option<f64>> = outcomes.iter().map(|o| o.feasible.then_some(o.time_ms)).collect();

    let limit = CURVE_BUDGETS_MS.iter().copied().fold(budget, f64::max);
    let planner = LatticePlanner::new(
        &vehicle,
        LatticeConfig {
            time_limit: limit.is_finite().then(|| Duration::from_secs_f64(limit / 1e3)),
            ..LatticeConfig::default()
        },
    );
    let lattice_times: Vec<Option<f64>> = scenarios
        .iter()
        .map(|s| {
            let t = Instant::now();
            let ok = planner.plan(dataset.grid(s), &s.q0, &s.goal.region()).is_ok();
            ok.then(|| t.elapsed().as_secs_f64() * 1e3)
        })
        .collect();

    let report = EvalReport {
        split: split.name().into(),
        n_segments: n,
        budget_ms: budget,
        policy: summarize(&outcomes),
        policy_accuracy: accuracy_within(&policy_times, budget),
        lattice_accuracy: accuracy_within(&lattice_times, budget),
        curve: CURVE_BUDGETS_MS
            .iter()
            .map(|&b| CurvePoint {
                budget_ms: b,
                policy: accuracy_within(&policy_times, b),
                lattice: accuracy_within(&lattice_times, b),
            })
            .collect(),
        lattice_times_ms: lattice_times,
    };
    if let Some(out) = &o.out {
        write_json(out, &report)?;
    }
    let m = &report.policy;
    println!("split {} ({} scenarios), N = {}", report.split, m.count, n);
    println!("policy accuracy (no budget)  {:.3}", m.accuracy);
    println!("mean accumulated turn [rad]  {:.4}", m.mean_turn);
    println!("mean length [m]              {:.3}", m.mean_length);
    println!("inference time [ms]          {:.3} ± {:.3}", m.mean_time_ms, m.std_time_ms);
    println!("budget {budget} ms: policy {:.3}, lattice {:.3}", report.policy_accuracy, report.lattice_accuracy);
    println!("{:>10} {:>8} {:>8}", "budget_ms", "policy", "lattice");
    for c in &report.curve {
        println!("{:>10} {:>8.3} {:>8.3}", c.budget_ms, c.policy, c.lattice);
    }
    Ok(Status::Ok)
}

#[derive(Debug, Serialize)]
pub struct ReachCell {
    pub x: f64,
    pub y: f64,
    pub feasible: usize,
    pub fraction: f64,
}

#[derive(Debug, Serialize)]
pub struct ReachReport {
    pub n_segments: usize,
    pub headings: Vec<f64>,
    pub cells: Vec<ReachCell>,
}

/// Goal headings strictly inside (-pi/2, pi/2), at bin centers.
pub fn goal_headings(count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| -FRAC_PI_2 + (k as f64 + 0.5) * std::f64::consts::PI / count as f64)
        .collect()
}

/// In-bounds goal positions on a square grid through the anchor.
pub fn goal_positions(step: f64) -> Vec<[f64; 2]> {
    let lo = cell_center(nsplan::gridmap::Cell { row: GRID_SIZE - 1, col: GRID_SIZE - 1 });
    let hi = cell_center(nsplan::gridmap::Cell { row: 0, col: 0 });
    let range = |a: f64, b: f64| ((a / step).ceil() as i64)..=((b / step).floor() as i64);
    let mut out = Vec::new();
    for i in range(lo[0], hi[0]) {
        for j in range(lo[1], hi[1]) {
            let p = [i as f64 * step, j as f64 * step];
            if world_to_cell(p).is_ok() {
                out.push(p);
            }
        }
    }
    out
}

pub fn reachable(o: &Opts) -> Result<Status> {
    let map = Opts::require(&o.map, "map")?;
    let grid = OccupancyGrid::load(map).with_context(|| format!("loading map {}", map.display()))?;
    let (params, trained) = load_policy(Opts::require(&o.checkpoint, "checkpoint")?)?;
    let n = n_segments(o, trained);
    let q0 = o.q0()?;
    let vehicle = VehicleParams::kia_rio();
    let step = o.goal_step.unwrap_or(DEFAULT_GOAL_STEP);
    if !(step > 0.0) {
        bail!("--goal-step must be positive");
    }
    let headings = goal_headings(o.headings.unwrap_or(DEFAULT_HEADINGS).max(1));
    let enc = params.encode_map(&grid);
    let mut cells = Vec::new();
    for p in goal_positions(step) {
        let mut feasible = 0;
        for &theta in &headings {
            let goal = GoalRegion::new(p[0], p[1], theta);
            let r = params.rollout_with(&enc, &grid, &vehicle, &q0, &goal, n)?;
            feasible += is_feasible(&r.path, &grid, &vehicle, &goal) as usize;
        }
        cells.push(ReachCell {
            x: p[0],
            y: p[1],
            feasible,
            fraction: feasible as f64 / headings.len() as f64,
        });
    }
    let scale = o.scale();
    let mut img = render::map_image(&grid, scale);
    for c in cells.iter().filter(|c| c.feasible > 0) {
        render::draw_square(&mut img, [c.x, c.y], 1.5 * scale as f64, scale, render::heat_color(c.fraction));
    }
    let out = o.out.clone().unwrap_or_else(|| PathBuf::from("reachable.png"));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    img.save(&out).with_context(|| format!("writing {}", out.display()))?;
    let report = ReachReport { n_segments: n, headings, cells };
    write_json(&out.with_extension("json"), &report)?;
    let reached = report.cells.iter().filter(|c| c.feasible > 0).count();
    println!("{} of {} goal cells reachable; wrote {}", reached, report.cells.len(), out.display());
    Ok(Status::Ok)
}
