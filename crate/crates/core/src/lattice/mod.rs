//! State-lattice reference planner.
//!
//! Best-first search over the 73 quintic primitives, ordered by accumulated
//! arc length plus the Dubins distance to the goal. Every expanded node also
//! tries a direct single-segment connection to the goal, which lets the
//! search finish exactly on the goal pose instead of wherever the discrete
//! lattice happens to pass. Search stops once a node is within 0.2 m of the
//! goal in Dubins distance.
//!
//! Poses are certified against the grid with a clearance margin, so the
//! returned path stays collision-free under the loss module's boundary
//! sampling at any resolution.

pub mod dubins;
pub mod primitives;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::f64::consts::FRAC_PI_2;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::gridmap::{footprint_collides, Certificate, OccupancyGrid, SafetyChecker};
use crate::kinematics::{compose, curvature_limit, to_local, Configuration, Pose2, VehicleParams};
use crate::loss::GoalRegion;
use crate::spline::{
    chain_from, discretize, graph_curvature, solve_segment, PathSpline, SegmentSpec, MAX_SEGMENT_LENGTH,
};

pub use dubins::{dubins_distance, shortest_dubins, DubinsPath, DubinsWord};
pub use primitives::{generate_primitives, MotionPrimitive, PRIMITIVE_COUNT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("no path found after {expansions} expansions")]
    NoPath { expansions: usize },
    #[error("start configuration is in collision")]
    StartInCollision,
    #[error("time limit reached after {expansions} expansions")]
    TimeLimit { expansions: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeConfig {
    /// Maximum number of node expansions.
    pub budget: usize,
    /// Required clearance of every footprint sample from occupied cells.
    pub safety_margin: f64,
    pub bin_xy: f64,
    pub bin_theta: f64,
    /// Success radius in Dubins distance.
    pub goal_tolerance: f64,
    /// Spacing of collision-checked poses along a segment (local x).
    pub sample_spacing: f64,
    /// Try a direct quintic connection to the goal from every expanded node.
    pub connect_to_goal: bool,
    /// Wall-clock limit on the search, checked before every expansion.
    pub time_limit: Option<Duration>,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        LatticeConfig {
            budget: 50_000,
            safety_margin: 0.35,
            bin_xy: 0.1,
            bin_theta: 0.05,
            goal_tolerance: 0.2,
            sample_spacing: 0.04,
            connect_to_goal: true,
            time_limit: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LatticePlan {
    pub specs: Vec<SegmentSpec>,
    pub path: PathSpline,
    /// Dense polyline of the guiding point (at most 0.1 m between vertices).
    pub polyline: Vec<[f64; 2]>,
    pub length: f64,
    pub expansions: usize,
    /// Dubins distance from the final pose to the goal.
    pub goal_distance: f64,
    /// Heuristic value and remaining path length at every node of the solution.
    pub heuristic_trace: Vec<(f64, f64)>,
}

/// Search-tree node.
#[derive(Debug, Clone, Copy)]
pub struct LatticeNode {
    pub pose: Pose2,
    /// Accumulated arc length.
    pub g: f64,
    pub parent: Option<usize>,
    pub primitive: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    g: f64,
    seq: usize,
    node: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, then deeper nodes, then insertion order
        other
            .f
            .total_cmp(&self.f)
            .then(self.g.total_cmp(&other.g))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Local-frame samples `(x, y, cos, sin)` of a segment, excluding its start.
fn segment_samples(start_curvature: f64, spec: SegmentSpec, spacing: f64) -> Option<(Vec<[f64; 4]>, f64)> {
    let seg = solve_segment(start_curvature, spec).ok()?;
    let n = ((spec.x_end / spacing).ceil() as usize).max(2);
    let mut out = Vec::with_capacity(n);
    let mut max_k: f64 = start_curvature.abs();
    for j in 1..=n {
        let x = spec.x_end * j as f64 / n as f64;
        let (y, dy, ddy) = seg.eval(x);
        let norm = (1.0 + dy * dy).sqrt();
        out.push([x, y, 1.0 / norm, dy / norm]);
        max_k = max_k.max(graph_curvature(dy, ddy).abs());
    }
    Some((out, max_k))
}

pub struct LatticePlanner {
    params: VehicleParams,
    config: LatticeConfig,
    primitives: Vec<MotionPrimitive>,
    templates: Vec<Vec<[f64; 4]>>,
    rho: f64,
    kappa_max: f64,
}

impl LatticePlanner {
    pub fn new(params: &VehicleParams, config: LatticeConfig) -> Self {
        let primitives = generate_primitives(params);
        let templates = primitives
            .iter()
            .map(|p| segment_samples(0.0, p.spec, config.sample_spacing).expect("valid primitive").0)
            .collect();
        let kappa_max = curvature_limit(params);
        LatticePlanner {
            params: *params,
            config,
            primitives,
            templates,
            rho: 1.0 / kappa_max,
            kappa_max,
        }
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    pub fn primitives(&self) -> &[MotionPrimitive] {
        &self.primitives
    }

    pub fn turning_radius(&self) -> f64 {
        self.rho
    }

    fn key(&self, p: Pose2) -> (i64, i64, i64) {
        (
            (p.x / self.config.bin_xy).floor() as i64,
            (p.y / self.config.bin_xy).floor() as i64,
            (p.theta / self.config.bin_theta).floor() as i64,
        )
    }

    fn samples_safe(&self, safety: &SafetyChecker, frame: Pose2, samples: &[[f64; 4]]) -> bool {
        let (s, c) = frame.theta.sin_cos();
        // poses close enough to an already certified pose are skipped
        let mut anchor: Option<Certificate> = None;
        for &[lx, ly, tc, ts] in samples {
            let x = frame.x + c * lx - s * ly;
            let y = frame.y + s * lx + c * ly;
            let (hc, hs) = (c * tc - s * ts, s * tc + c * ts);
            if let Some(a) = &anchor {
                if a.covers(safety.body_center(x, y, hc, hs), [hc, hs]) {
                    continue;
                }
            }
            match safety.certify(x, y, hc, hs) {
                Some(cert) => anchor = Some(cert),
                None => return false,
            }
        }
        true
    }

    /// Direct connection from `pose` (with curvature `k0`) to the goal pose.
    fn try_connect(&self, safety: &SafetyChecker, pose: Pose2, k0: f64, goal: Pose2) -> Option<SegmentSpec> {
        let local = to_local(pose, goal);
        if !(local.x > 0.5 && local.x <= MAX_SEGMENT_LENGTH && local.theta.abs() < FRAC_PI_2 - 0.1) {
            return None;
        }
        let spec = SegmentSpec::new(local.x, local.y, local.theta.tan(), 0.0);
        let (samples, max_k) = segment_samples(k0, spec, self.config.sample_spacing)?;
        if max_k > 0.99 * self.kappa_max {
            return None;
        }
        self.samples_safe(safety, pose, &samples).then_some(spec)
    }

    pub fn plan(&self, grid: &OccupancyGrid, q0: &Configuration, goal: &GoalRegion) -> Result<LatticePlan, LatticeError> {
        let started = Instant::now();
        if footprint_collides(grid, q0.pose(), &self.params) {
            return Err(LatticeError::StartInCollision);
        }
        let safety = SafetyChecker::new(grid, &self.params, self.config.safety_margin);
        let goal_pose = Pose2::new(goal.x, goal.y, goal.theta);
        let k_start = q0.beta.tan() / self.params.wheelbase;
        // the start node may carry nonzero curvature, so its expansions are solved separately
        let start_templates: Option<Vec<Option<Vec<[f64; 4]>>>> = (k_start != 0.0).then(|| {
            self.primitives
                .iter()
                .map(|p| {
                    segment_samples(k_start, p.spec, self.config.sample_spacing)
                        .filter(|(_, k)| *k <= self.kappa_max)
                        .map(|(s, _)| s)
                })
                .collect()
        });

        let mut nodes = vec![LatticeNode {
            pose: q0.pose(),
            g: 0.0,
            parent: None,
            primitive: None,
        }];
        let mut open = BinaryHeap::new();
        let mut best_g: HashMap<(i64, i64, i64), f64> = HashMap::new();
        let mut closed: HashSet<(i64, i64, i64)> = HashSet::new();
        let mut seq = 0usize;
        open.push(Open {
            f: dubins_distance(q0.pose(), goal_pose, self.rho),
            g: 0.0,
            seq,
            node: 0,
        });
        best_g.insert(self.key(q0.pose()), 0.0);
        let mut expansions = 0usize;

        while let Some(top) = open.pop() {
            let node = nodes[top.node];
            let key = self.key(node.pose);
            if closed.contains(&key) || top.g > best_g.get(&key).copied().unwrap_or(f64::INFINITY) {
                continue;
            }
            if expansions >= self.config.budget {
                return Err(LatticeError::NoPath { expansions });
            }
            if self.config.time_limit.is_some_and(|t| started.elapsed() >= t) {
                return Err(LatticeError::TimeLimit { expansions });
            }
            expansions += 1;
            closed.insert(key);

            let h = dubins_distance(node.pose, goal_pose, self.rho);
            if h <= self.config.goal_tolerance {
                return Ok(self.finish(&nodes, top.node, None, goal_pose, k_start, expansions));
            }
            let k_node = if top.node == 0 { k_start } else { 0.0 };
            if self.config.connect_to_goal {
                if let Some(spec) = self.try_connect(&safety, node.pose, k_node, goal_pose) {
                    return Ok(self.finish(&nodes, top.node, Some(spec), goal_pose, k_start, expansions));
                }
            }

            for (pi, prim) in self.primitives.iter().enumerate() {
                let samples = match (&start_templates, top.node) {
                    (Some(st), 0) => match &st[pi] {
                        Some(s) => s,
                        None => continue,
                    },
                    _ => &self.templates[pi],
                };
                let [lx, ly, tc, ts] = *samples.last().expect("non-empty template");
                let child = compose(node.pose, Pose2::new(lx, ly, ts.atan2(tc)));
                let ckey = self.key(child);
                if closed.contains(&ckey) {
                    continue;
                }
                let g = node.g + prim.length;
                if g >= best_g.get(&ckey).copied().unwrap_or(f64::INFINITY) {
                    continue;
                }
                if !self.samples_safe(&safety, node.pose, samples) {
                    continue;
                }
                best_g.insert(ckey, g);
                nodes.push(LatticeNode {
                    pose: child,
                    g,
                    parent: Some(top.node),
                    primitive: Some(pi),
                });
                seq += 1;
                open.push(Open {
                    f: g + dubins_distance(child, goal_pose, self.rho),
                    g,
                    seq,
                    node: nodes.len() - 1,
                });
            }
        }
        Err(LatticeError::NoPath { expansions })
    }

    fn finish(
        &self,
        nodes: &[LatticeNode],
        last: usize,
        connection: Option<SegmentSpec>,
        goal: Pose2,
        k_start: f64,
        expansions: usize,
    ) -> LatticePlan {
        let mut branch = vec![last];
        while let Some(p) = nodes[*branch.last().unwrap()].parent {
            branch.push(p);
        }
        branch.reverse();
        let mut specs: Vec<SegmentSpec> = branch
            .iter()
            .filter_map(|&n| nodes[n].primitive.map(|p| self.primitives[p].spec))
            .collect();
        specs.extend(connection);
        if specs.is_empty() {
            // already at the goal: a short straight stub keeps the path non-empty
            specs.push(SegmentSpec::straight(self.config.goal_tolerance * 0.5));
        }
        let path = chain_from(nodes[0].pose, k_start, &specs).expect("planned specs are valid");
        let d = discretize(&path);
        let length = d.length();
        let heuristic_trace = branch
            .iter()
            .map(|&n| (dubins_distance(nodes[n].pose, goal, self.rho), length - nodes[n].g))
            .collect();
        LatticePlan {
            goal_distance: dubins_distance(path.end_pose(), goal, self.rho),
            specs,
            polyline: d.polyline(),
            length,
            expansions,
            heuristic_trace,
            path,
        }
    }
}

/// Plans with the default configuration and the given expansion budget.
pub fn plan(
    grid: &OccupancyGrid,
    params: &VehicleParams,
    q0: &Configuration,
    goal: &GoalRegion,
    budget: usize,
) -> Result<LatticePlan, LatticeError> {
    let config = LatticeConfig {
        budget,
        ..LatticeConfig::default()
    };
    LatticePlanner::new(params, config).plan(grid, q0, goal)
}

/// Reference-path audit: collision-free under boundary sampling at poses at
/// most `spacing` apart, and within the curvature limit.
pub fn audit_path(path: &PathSpline, grid: &OccupancyGrid, params: &VehicleParams, spacing: f64) -> bool {
    let kmax = curvature_limit(params);
    path.segments.iter().all(|seg| {
        let n = ((seg.x_end / spacing).ceil() as usize).max(2);
        (0..=n).all(|j| {
            let x = seg.x_end * j as f64 / n as f64;
            !footprint_collides(grid, seg.pose_at(x), params) && seg.curvature_at(x).abs() <= kmax
        })
    })
}
