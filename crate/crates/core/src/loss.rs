//! Feasibility loss of a chained-quintic path: collision, curvature,
//! overshoot and total-curvature terms, plus the plain feasibility predicate.
//!
//! The per-term functions taking a [`DiscretizedPath`] are straightforward
//! `f64` loops. [`loss_terms`] evaluates all four terms at once over a
//! generic [`Trace`], which is what training differentiates.

use serde::{Deserialize, Serialize};

use crate::dual::Real;
use crate::gridmap::{closest_on_segment, distance_to_polyline, FootprintChecker, OccupancyGrid};
use crate::kinematics::{
    characteristic_points_at, curvature_limit, footprint_points, normalize_angle, Configuration,
    VehicleParams,
};
use crate::spline::{discretize, endpoint_configuration_unchecked, trace, DiscretizedPath, PathSpline, Trace};

pub const GOAL_POSITION_TOLERANCE: f64 = 0.2;
pub const GOAL_ANGLE_TOLERANCE: f64 = 0.05;
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// Box of acceptable final configurations around `(x, y, theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub pos_tol: f64,
    pub ang_tol: f64,
}

impl GoalRegion {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        GoalRegion {
            x,
            y,
            theta: normalize_angle(theta),
            pos_tol: GOAL_POSITION_TOLERANCE,
            ang_tol: GOAL_ANGLE_TOLERANCE,
        }
    }

    pub fn contains(&self, x: f64, y: f64, theta: f64) -> bool {
        (x - self.x).abs() <= self.pos_tol
            && (y - self.y).abs() <= self.pos_tol
            && normalize_angle(theta - self.theta).abs() <= self.ang_tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub gamma: f64,
    /// Weight of the heading term of the overshoot loss relative to position.
    pub angle_weight: f64,
    pub tcurv_enabled: bool,
    /// Factor on the goal tolerances inside the overshoot hinge. Below 1 the
    /// optimizer aims inside the goal region instead of at its edge.
    pub tolerance_scale: f64,
    /// Factor on the curvature bound inside the curvature hinge.
    pub curvature_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: DEFAULT_GAMMA,
            angle_weight: 1.0,
            tcurv_enabled: true,
            tolerance_scale: 1.0,
            curvature_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub coll: f64,
    pub curv: f64,
    pub over: f64,
    pub tcurv: f64,
    pub total: f64,
    pub feasible: bool,
}

impl LossBreakdown {
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.coll += b.coll / n;
            m.curv += b.curv / n;
            m.over += b.over / n;
            m.tcurv += b.tcurv / n;
            m.total += b.total / n;
        }
        m.feasible = !items.is_empty() && items.iter().all(|b| b.feasible);
        m
    }

    /// First violated requirement, in order collision, curvature, overshoot.
    pub fn failure_reason(&self) -> Option<&'static str> {
        if self.coll > 0.0 {
            Some("collision")
        } else if self.curv > 0.0 {
            Some("curvature")
        } else if self.over > 0.0 {
            Some("overshoot")
        } else {
            None
        }
    }
}

/// Everything the loss needs besides the path itself.
pub struct LossContext<'a> {
    pub grid: &'a OccupancyGrid,
    pub params: VehicleParams,
    pub ref_path: &'a [[f64; 2]],
    pub goal: GoalRegion,
    pub config: LossConfig,
    pub kappa_max: f64,
    checker: FootprintChecker,
}

impl<'a> LossContext<'a> {
    pub fn new(
        grid: &'a OccupancyGrid,
        params: &VehicleParams,
        ref_path: &'a [[f64; 2]],
        goal: GoalRegion,
        config: LossConfig,
    ) -> Self {
        assert!(!ref_path.is_empty(), "reference path must be non-empty");
        LossContext {
            grid,
            params: *params,
            ref_path,
            goal,
            config,
            kappa_max: curvature_limit(params),
            checker: FootprintChecker::new(params),
        }
    }
}

/// Loss terms in generic arithmetic, plus bookkeeping about which branch of
/// every indicator and hinge was taken.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<R> {
    pub coll: R,
    pub curv: R,
    pub over: R,
    pub tcurv: R,
    pub feasible: bool,
    pub tcurv_enabled: bool,
    /// Hash of all branch decisions (collision gates, hinge activity, signs,
    /// nearest reference segments). Equal signatures mean the loss is one
    /// smooth piece between the two evaluation points.
    pub signature: u64,
    /// Smallest distance of a curvature or overshoot hinge argument to its
    /// switching point.
    pub hinge_margin: f64,
}

impl<R: Real> LossTerms<R> {
    /// The optimized objective: the sum of violations, or the total-curvature
    /// regularizer once the path is feasible.
    pub fn total(&self) -> R {
        let base = self.coll + self.curv + self.over;
        if self.feasible && self.tcurv_enabled {
            base + self.tcurv
        } else {
            base
        }
    }

    pub fn breakdown(&self) -> LossBreakdown {
        LossBreakdown {
            coll: self.coll.val(),
            curv: self.curv.val(),
            over: self.over.val(),
            tcurv: self.tcurv.val(),
            total: self.total().val(),
            feasible: self.feasible,
        }
    }
}

struct Signature(u64);

impl Signature {
    fn push(&mut self, v: u64) {
        // FNV-1a over 8-byte words
        self.0 ^= v;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
}

fn hinge<R: Real>(v: R, threshold: f64, sig: &mut Signature, margin: &mut f64) -> R {
    let d = v.val() - threshold;
    *margin = margin.min(d.abs());
    sig.push((d > 0.0) as u64);
    if d > 0.0 {
        v - threshold
    } else {
        R::cst(0.0)
    }
}

fn abs_tracked<R: Real>(v: R, sig: &mut Signature) -> R {
    sig.push((v.val() < 0.0) as u64);
    v.abs()
}

/// Like [`abs_tracked`], but values within rounding noise of zero are not
/// recorded. Curvature is continuous across segment joints, so the joint
/// difference is zero up to rounding with a random sign.
fn abs_tracked_noisy<R: Real>(v: R, sig: &mut Signature) -> R {
    if v.val().abs() > 1e-9 {
        sig.push((v.val() < 0.0) as u64);
    }
    v.abs()
}

/// Distance from a point to the polyline, differentiable in the point.
fn polyline_distance<R: Real>(p: [R; 2], poly: &[[f64; 2]], sig: &mut Signature) -> R {
    let pv = [p[0].val(), p[1].val()];
    if poly.len() == 1 {
        sig.push(0);
        return (p[0] - poly[0][0]).hypot(p[1] - poly[0][1]);
    }
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for (i, w) in poly.windows(2).enumerate() {
        let (foot, t) = closest_on_segment(pv, w[0], w[1]);
        let d = (pv[0] - foot[0]).hypot(pv[1] - foot[1]);
        if d < best.0 {
            best = (d, i, t);
        }
    }
    let (d, i, t) = best;
    let (a, b) = (poly[i], poly[i + 1]);
    let region = if t <= 0.0 {
        0
    } else if t >= 1.0 {
        2
    } else {
        1
    };
    sig.push(((i as u64) << 2) | region);
    if d == 0.0 {
        return R::cst(0.0);
    }
    match region {
        0 => (p[0] - a[0]).hypot(p[1] - a[1]),
        2 => (p[0] - b[0]).hypot(p[1] - b[1]),
        _ => {
            let ab = [b[0] - a[0], b[1] - a[1]];
            let len = ab[0].hypot(ab[1]);
            // unsigned distance to the supporting line
            let cross = (p[0] - a[0]) * (ab[1] / len) - (p[1] - a[1]) * (ab[0] / len);
            cross.abs()
        }
    }
}

/// All loss terms over a traced path. `trace` must use at least two samples
/// per segment; sample 0 of each segment is only used as a chord start.
pub fn loss_terms<R: Real>(tr: &Trace<R>, ctx: &LossContext) -> LossTerms<R> {
    let mut sig = Signature(0xcbf29ce484222325);
    let mut margin = f64::INFINITY;
    let zero = R::cst(0.0);
    let (mut coll, mut curv, mut tcurv) = (zero, zero, zero);
    let mut collided = false;
    let kmax = ctx.kappa_max * ctx.config.curvature_scale;
    let nseg = tr.samples.len();

    for (i, seg) in tr.samples.iter().enumerate() {
        for j in 1..seg.len() {
            let s = &seg[j];
            let hit = ctx
                .checker
                .collides_at(ctx.grid, s.x.val(), s.y.val(), s.cos_h.val(), s.sin_h.val());
            sig.push(hit as u64);
            if hit {
                collided = true;
                let pts = characteristic_points_at(s.x, s.y, s.cos_h, s.sin_h, &ctx.params);
                let mut dsum = zero;
                for p in pts {
                    dsum = dsum + polyline_distance(p, ctx.ref_path, &mut sig);
                }
                coll = coll + dsum * s.chord;
            }
            let k = abs_tracked(s.curvature, &mut sig);
            curv = curv + hinge(k, kmax, &mut sig, &mut margin) * s.chord;

            let next = if j + 1 < seg.len() {
                Some(seg[j + 1].curvature)
            } else if i + 1 < nseg {
                Some(tr.samples[i + 1][0].curvature)
            } else {
                None
            };
            if let Some(kn) = next {
                tcurv = tcurv + abs_tracked_noisy(kn - s.curvature, &mut sig);
            }
        }
    }
    let tcurv = tcurv * ctx.config.gamma;

    let [ex, ey, et, _] = *tr.endpoints.last().expect("non-empty trace");
    let g = &ctx.goal;
    let dx = abs_tracked(ex - g.x, &mut sig);
    let dy = abs_tracked(ey - g.y, &mut sig);
    let raw = et.val() - g.theta;
    let dt = abs_tracked(et - g.theta - (raw - normalize_angle(raw)), &mut sig);
    let (pos_tol, ang_tol) = (g.pos_tol * ctx.config.tolerance_scale, g.ang_tol * ctx.config.tolerance_scale);
    let over = hinge(dx, pos_tol, &mut sig, &mut margin)
        + hinge(dy, pos_tol, &mut sig, &mut margin)
        + hinge(dt, ang_tol, &mut sig, &mut margin) * ctx.config.angle_weight;

    let feasible = !collided && curv.val() == 0.0 && over.val() == 0.0;
    sig.push(feasible as u64);
    LossTerms {
        coll,
        curv,
        over,
        tcurv,
        feasible,
        tcurv_enabled: ctx.config.tcurv_enabled,
        signature: sig.0,
        hinge_margin: margin,
    }
}

/// Loss of a path with the default 128 samples per segment.
pub fn total_loss_with(path: &PathSpline, ctx: &LossContext) -> LossBreakdown {
    let first = &path.segments[0];
    let specs: Vec<[f64; 4]> = path.specs().iter().map(|s| s.to_array()).collect();
    let tr = trace(
        [first.frame.x, first.frame.y, first.frame.theta],
        first.start_curvature,
        &specs,
        path.points_per_segment,
    );
    loss_terms(&tr, ctx).breakdown()
}

pub fn total_loss(
    path: &PathSpline,
    grid: &OccupancyGrid,
    params: &VehicleParams,
    goal: &GoalRegion,
    ref_path: &[[f64; 2]],
) -> LossBreakdown {
    let ctx = LossContext::new(grid, params, ref_path, *goal, LossConfig::default());
    total_loss_with(path, &ctx)
}

pub fn collision_loss(
    d: &DiscretizedPath,
    grid: &OccupancyGrid,
    params: &VehicleParams,
    ref_path: &[[f64; 2]],
) -> f64 {
    let checker = FootprintChecker::new(params);
    let mut loss = 0.0;
    for seg in &d.segments {
        for s in &seg[1..] {
            if checker.collides(grid, s.pose()) {
                let dsum: f64 = footprint_points(s.pose(), params)
                    .iter()
                    .map(|p| distance_to_polyline(*p, ref_path))
                    .sum();
                loss += dsum * s.chord;
            }
        }
    }
    loss
}

pub fn curvature_loss(d: &DiscretizedPath, kappa_max: f64) -> f64 {
    d.segments
        .iter()
        .flat_map(|seg| &seg[1..])
        .map(|s| (s.curvature.abs() - kappa_max).max(0.0) * s.chord)
        .sum()
}

pub fn overshoot_loss(endpoint: &Configuration, goal: &GoalRegion) -> f64 {
    overshoot_loss_weighted(endpoint, goal, 1.0)
}

pub fn overshoot_loss_weighted(endpoint: &Configuration, goal: &GoalRegion, angle_weight: f64) -> f64 {
    ((endpoint.x - goal.x).abs() - goal.pos_tol).max(0.0)
        + ((endpoint.y - goal.y).abs() - goal.pos_tol).max(0.0)
        + (normalize_angle(endpoint.theta - goal.theta).abs() - goal.ang_tol).max(0.0) * angle_weight
}

pub fn total_curvature_loss(d: &DiscretizedPath, gamma: f64) -> f64 {
    let mut sum = 0.0;
    for (i, seg) in d.segments.iter().enumerate() {
        for j in 1..seg.len() {
            let next = if j + 1 < seg.len() {
                seg[j + 1].curvature
            } else if let Some(n) = d.segments.get(i + 1) {
                n[0].curvature
            } else {
                continue;
            };
            sum += (next - seg[j].curvature).abs();
        }
    }
    gamma * sum
}

/// Feasibility checked directly: no footprint collision at any sample, the
/// curvature bound everywhere, and the endpoint inside the goal region.
pub fn is_feasible(path: &PathSpline, grid: &OccupancyGrid, params: &VehicleParams, goal: &GoalRegion) -> bool {
    let d = discretize(path);
    let checker = FootprintChecker::new(params);
    let kmax = curvature_limit(params);
    let end = endpoint_configuration_unchecked(path, params);
    d.samples()
        .all(|s| !checker.collides(grid, s.pose()) && s.curvature.abs() <= kmax)
        && goal.contains(end.x, end.y, end.theta)
}
