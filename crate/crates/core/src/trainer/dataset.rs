//! Scenario generation: local maps augmented with random rectangles, goals
//! sampled over free cells, and reference paths from the lattice planner.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainerError;
use crate::gridmap::{add_random_obstacles, cell_center, OccupancyGrid, SafetyChecker, MAX_RANDOM_OBSTACLES};
use crate::kinematics::{Configuration, Pose2, VehicleParams};
use crate::lattice::dubins::shortest_dubins;
use crate::lattice::{LatticeConfig, LatticePlanner};
use crate::loss::{is_feasible, GoalRegion};
use crate::spline::{chain, discretize, PathSpline, SegmentSpec};

/// Largest spacing between stored reference-path vertices.
pub const REF_PATH_SPACING: f64 = 0.1;
/// Samples per segment of the polyline the reference path is thinned from;
/// keeps raw spacing below `REF_PATH_SPACING` for segments up to ~50 m long.
const DENSE_POINTS: usize = 512;
/// Goals closer than this to the start are resampled.
pub const MIN_GOAL_DISTANCE: f64 = 1.0;
/// Goals whose shortest Dubins path turns more than this in total (loops)
/// are rejected before planning.
pub const MAX_GOAL_TURN: f64 = 2.0;
/// Default node budget for reference planning during generation.
pub const GENERATION_BUDGET: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl GoalPose {
    pub fn region(&self) -> GoalRegion {
        GoalRegion::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    /// Local map identifier; the image lives at `maps/<map>.png`.
    pub map: String,
    pub q0: Configuration,
    pub goal: GoalPose,
    /// Lattice solution the reference polyline was taken from.
    pub ref_specs: Vec<SegmentSpec>,
    pub ref_path: Vec<[f64; 2]>,
}

impl Scenario {
    pub fn ref_spline(&self, vehicle: &VehicleParams) -> Result<PathSpline, TrainerError> {
        Ok(chain(&self.q0, vehicle, &self.ref_specs)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Scenario targets per split.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub scenarios_per_map: usize,
    pub obstacle_count_max: usize,
    pub seed: u64,
    /// Lattice node budget per scenario.
    pub budget: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            train: 500,
            val: 100,
            test: 100,
            scenarios_per_map: 5,
            obstacle_count_max: MAX_RANDOM_OBSTACLES,
            seed: 0,
            budget: GENERATION_BUDGET,
        }
    }
}

impl GenConfig {
    fn target(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub id: String,
    pub source: String,
    pub split: Split,
    pub obstacles: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub scenarios: usize,
    pub attempts: usize,
    /// Goals rejected before planning (unsafe goal pose or a looping path).
    pub prefiltered: usize,
    /// All unsolved attempts, including prefiltered ones.
    pub skipped: usize,
    pub skip_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub config: GenConfig,
    pub sources: Vec<String>,
    pub maps: Vec<MapInfo>,
    pub splits: BTreeMap<String, SplitStats>,
}

/// Wall-clock planning statistics. Kept apart from `meta.json` so that the
/// dataset itself is byte-identical across runs with the same seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub plans: usize,
    pub mean_plan_ms: f64,
    pub max_plan_ms: f64,
    pub mean_solved_plan_ms: f64,
}

pub struct Dataset {
    pub root: PathBuf,
    pub meta: DatasetMeta,
    pub maps: BTreeMap<String, OccupancyGrid>,
    pub splits: BTreeMap<Split, Vec<Scenario>>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Scenario] {
        self.splits.get(&split).map_or(&[], |v| v.as_slice())
    }

    pub fn grid(&self, scenario: &Scenario) -> &OccupancyGrid {
        &self.maps[&scenario.map]
    }

    /// Loads a dataset directory and re-validates every reference path.
    pub fn load(root: &Path, vehicle: &VehicleParams) -> Result<Dataset, TrainerError> {
        let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(root.join("meta.json"))?)?;
        let mut maps = BTreeMap::new();
        for info in &meta.maps {
            let grid = OccupancyGrid::load(&root.join("maps").join(format!("{}.png", info.id)))?;
            maps.insert(info.id.clone(), grid);
        }
        let mut splits = BTreeMap::new();
        for split in Split::ALL {
            let file = fs::File::open(root.join("scenarios").join(format!("{}.jsonl", split.name())))?;
            let mut list = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let s: Scenario = serde_json::from_str(&line)?;
                let grid = maps
                    .get(&s.map)
                    .ok_or_else(|| TrainerError::Invalid(format!("{}: unknown map {}", s.id, s.map)))?;
                let path = s.ref_spline(vehicle)?;
                if !is_feasible(&path, grid, vehicle, &s.goal.region()) {
                    return Err(TrainerError::Invalid(format!("{}: reference path is not feasible", s.id)));
                }
                list.push(s);
            }
            splits.insert(split, list);
        }
        let ds = Dataset {
            root: root.to_path_buf(),
            meta,
            maps,
            splits,
        };
        ds.check_disjoint()?;
        Ok(ds)
    }

    /// No local map is shared between splits, and test maps come from their
    /// own source maps whenever there is more than one source.
    pub fn check_disjoint(&self) -> Result<(), TrainerError> {
        let split_of: BTreeMap<&str, Split> = self.meta.maps.iter().map(|m| (m.id.as_str(), m.split)).collect();
        for (split, list) in &self.splits {
            for s in list {
                if split_of.get(s.map.as_str()) != Some(split) {
                    return Err(TrainerError::Invalid(format!("{} uses map {} of another split", s.id, s.map)));
                }
            }
        }
        if self.meta.sources.len() > 1 {
            let test_sources: Vec<&str> = self
                .meta
                .maps
                .iter()
                .filter(|m| m.split == Split::Test)
                .map(|m| m.source.as_str())
                .collect();
            let leak = self
                .meta
                .maps
                .iter()
                .any(|m| m.split != Split::Test && test_sources.contains(&m.source.as_str()));
            if leak {
                return Err(TrainerError::Invalid("test source map also feeds train/val".into()));
            }
        }
        Ok(())
    }
}

/// Greedy thinning of a dense polyline so consecutive vertices stay within
/// `spacing` of each other along the path.
fn thin_polyline(points: &[[f64; 2]], spacing: f64) -> Vec<[f64; 2]> {
    let mut out = vec![points[0]];
    let mut run = 0.0;
    for w in points.windows(2) {
        let step = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if run + step > spacing {
            if run > 0.0 {
                out.push(w[0]);
            }
            run = 0.0;
        }
        run += step;
    }
    let last = *points.last().expect("non-empty polyline");
    if *out.last().expect("non-empty") != last {
        out.push(last);
    }
    out
}

fn sample_goal(rng: &mut ChaCha8Rng, free: &[[f64; 2]], q0: &Configuration) -> GoalPose {
    loop {
        let p = free[rng.gen_range(0..free.len())];
        let theta = rng.gen_range(-FRAC_PI_2..FRAC_PI_2);
        if theta == -FRAC_PI_2 {
            continue;
        }
        if (p[0] - q0.x).hypot(p[1] - q0.y) >= MIN_GOAL_DISTANCE {
            return GoalPose { x: p[0], y: p[1], theta };
        }
    }
}

/// Cheap rejection of goals the planner cannot reach: the goal pose must
/// pass the planner's clearance test and the shortest Dubins path from the
/// start must not loop.
fn plausible_goal(safety: &SafetyChecker, q0: &Configuration, goal: &GoalPose, rho: f64) -> bool {
    if !safety.is_safe(goal.x, goal.y, goal.theta.cos(), goal.theta.sin()) {
        return false;
    }
    shortest_dubins(q0.pose(), Pose2::new(goal.x, goal.y, goal.theta), rho).is_some_and(|d| {
        let arcs = d.word.steering();
        let turn: f64 = d.params.iter().zip(arcs).filter(|(_, k)| *k != 0.0).map(|(p, _)| p).sum();
        turn <= MAX_GOAL_TURN
    })
}

fn write_jsonl(path: &Path, items: &[Scenario]) -> Result<(), TrainerError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for s in items {
        serde_json::to_writer(&mut f, s)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Generates a dataset into `out`. Test local maps are cut from the last
/// source map when there are at least two sources; train and validation use
/// the others in turn.
pub fn generate_dataset(
    sources: &[(String, OccupancyGrid)],
    config: &GenConfig,
    vehicle: &VehicleParams,
    out: &Path,
) -> Result<(DatasetMeta, TimingReport), TrainerError> {
    if sources.is_empty() {
        return Err(TrainerError::Invalid("no source maps".into()));
    }
    if config.obstacle_count_max > MAX_RANDOM_OBSTACLES {
        return Err(TrainerError::Invalid(format!(
            "at most {MAX_RANDOM_OBSTACLES} obstacles per map, got {}",
            config.obstacle_count_max
        )));
    }
    if config.scenarios_per_map == 0 {
        return Err(TrainerError::Invalid("scenarios_per_map must be positive".into()));
    }
    fs::create_dir_all(out.join("maps"))?;
    fs::create_dir_all(out.join("scenarios"))?;

    let planner = LatticePlanner::new(
        vehicle,
        LatticeConfig {
            budget: config.budget,
            ..LatticeConfig::default()
        },
    );
    let q0 = Configuration::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train_sources, test_sources) = if sources.len() > 1 {
        (&sources[..sources.len() - 1], &sources[sources.len() - 1..])
    } else {
        (sources, sources)
    };

    let mut maps = Vec::new();
    let mut stats = BTreeMap::new();
    let mut timings = Vec::new();
    let mut solved_ms = Vec::new();
    let mut source_turn = 0usize;
    for split in Split::ALL {
        let target = config.target(split);
        let mut list = Vec::with_capacity(target);
        let mut st = SplitStats::default();
        let mut map_index = 0usize;
        // give up on a split whose goals are essentially never solvable
        let attempt_cap = 200 * target.max(1) + 1000;
        while list.len() < target && st.attempts < attempt_cap {
            let pool = if split == Split::Test { test_sources } else { train_sources };
            let (source_name, source) = &pool[source_turn % pool.len()];
            source_turn += 1;
            let obstacles = rng.gen_range(0..=config.obstacle_count_max);
            let grid = add_random_obstacles(source, obstacles, rng.gen(), vehicle)?;
            let id = format!("{}_{map_index:05}", split.name());
            map_index += 1;
            let free: Vec<[f64; 2]> = grid.cells().filter(|(_, occ)| !occ).map(|(c, _)| cell_center(c)).collect();
            if free.is_empty() {
                continue;
            }
            let safety = SafetyChecker::new(&grid, vehicle, planner.config().safety_margin);
            let mut solved_here = 0;
            let mut tries = 0;
            while solved_here < config.scenarios_per_map && tries < 20 * config.scenarios_per_map && list.len() < target {
                tries += 1;
                st.attempts += 1;
                let goal = sample_goal(&mut rng, &free, &q0);
                if !plausible_goal(&safety, &q0, &goal, planner.turning_radius()) {
                    st.prefiltered += 1;
                    st.skipped += 1;
                    continue;
                }
                let t = Instant::now();
                let result = planner.plan(&grid, &q0, &goal.region());
                let ms = t.elapsed().as_secs_f64() * 1e3;
                timings.push(ms);
                match result {
                    Ok(plan) if is_feasible(&plan.path, &grid, vehicle, &goal.region()) => {
                        solved_ms.push(ms);
                        let dense = discretize(&plan.path.clone().with_points_per_segment(DENSE_POINTS)).polyline();
                        list.push(Scenario {
                            id: format!("{id}_{solved_here}"),
                            map: id.clone(),
                            q0,
                            goal,
                            ref_specs: plan.specs.clone(),
                            ref_path: thin_polyline(&dense, REF_PATH_SPACING),
                        });
                        solved_here += 1;
                    }
                    _ => st.skipped += 1,
                }
            }
            if solved_here > 0 {
                grid.save(&out.join("maps").join(format!("{id}.png")))?;
                maps.push(MapInfo {
                    id,
                    source: source_name.clone(),
                    split,
                    obstacles,
                });
            }
        }
        st.scenarios = list.len();
        st.skip_rate = if st.attempts == 0 { 0.0 } else { st.skipped as f64 / st.attempts as f64 };
        log::info!("{}: {} scenarios, skip rate {:.3}", split.name(), st.scenarios, st.skip_rate);
        write_jsonl(&out.join("scenarios").join(format!("{}.jsonl", split.name())), &list)?;
        stats.insert(split.name().to_string(), st);
    }

    let meta = DatasetMeta {
        config: config.clone(),
        sources: sources.iter().map(|(n, _)| n.clone()).collect(),
        maps,
        splits: stats,
    };
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let timing = TimingReport {
        plans: timings.len(),
        mean_plan_ms: mean(&timings),
        max_plan_ms: timings.iter().copied().fold(0.0, f64::max),
        mean_solved_plan_ms: mean(&solved_ms),
    };
    fs::write(out.join("timing.json"), serde_json::to_string_pretty(&timing)?)?;
    Ok((meta, timing))
}

/// Loads every PGM/PNG image in a directory as a source map, sorted by name.
pub fn load_source_maps(dir: &Path) -> Result<Vec<(String, OccupancyGrid)>, TrainerError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("png" | "pgm")
            )
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(TrainerError::Invalid(format!("no PGM/PNG maps in {}", dir.display())));
    }
    entries
        .into_iter()
        .map(|p| {
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("map").to_string();
            Ok((name, OccupancyGrid::load(&p)?))
        })
        .collect()
}
