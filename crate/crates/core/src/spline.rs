//! Paths made of chained quintic segments `y = f(x)`, each expressed in a
//! local frame placed at the previous segment's endpoint and aligned with
//! the path tangent there.
//!
//! Every segment satisfies `y(0) = 0`, `y'(0) = 0` and `y''(0) = k0`, where
//! `k0` is the curvature the previous segment ended with (or the curvature
//! implied by the initial steering angle). The endpoint conditions come from
//! a [`SegmentSpec`]. Six conditions fix the six coefficients, and the path is
//! continuous in position, heading and curvature across joints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Real;
use crate::kinematics::{curvature_limit, normalize_angle, Configuration, Pose2, VehicleParams};

pub const SAMPLES_PER_SEGMENT: usize = 128;
pub const MAX_SEGMENT_LENGTH: f64 = 10.0;
const DEGENERATE_LENGTH: f64 = 1e-6;
const ILL_CONDITIONED_LENGTH: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("segment length {0} is too short to define a quintic")]
    DegenerateSegment(f64),
    #[error("segment parameters are not finite")]
    NonFinite,
    #[error("path needs at least one segment")]
    Empty,
    /// The endpoint curvature cannot be produced by the steering limit. The
    /// configuration is still reported so callers can continue.
    #[error("endpoint curvature {kappa} exceeds the limit {limit}")]
    CurvatureExceeded {
        kappa: f64,
        limit: f64,
        config: Configuration,
    },
}

/// Endpoint of a segment in the previous segment's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub x_end: f64,
    pub y_end: f64,
    pub dy: f64,
    pub ddy: f64,
}

impl SegmentSpec {
    pub fn new(x_end: f64, y_end: f64, dy: f64, ddy: f64) -> Self {
        SegmentSpec {
            x_end,
            y_end,
            dy,
            ddy,
        }
    }

    pub fn straight(length: f64) -> Self {
        SegmentSpec::new(length, 0.0, 0.0, 0.0)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x_end, self.y_end, self.dy, self.ddy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        SegmentSpec::new(a[0], a[1], a[2], a[3])
    }

    /// Curvature of the path at this endpoint.
    pub fn end_curvature(&self) -> f64 {
        graph_curvature(self.dy, self.ddy)
    }

    /// Heading change across the segment, relative to its start frame.
    pub fn heading_change(&self) -> f64 {
        self.dy.atan()
    }

    fn validate(&self) -> Result<(), SplineError> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(SplineError::NonFinite);
        }
        if self.x_end <= DEGENERATE_LENGTH {
            return Err(SplineError::DegenerateSegment(self.x_end));
        }
        Ok(())
    }
}

/// Curvature of the graph of a function from its first and second derivative.
pub fn graph_curvature<R: Real>(dy: R, ddy: R) -> R {
    ddy / (dy * dy + 1.0).powf(1.5)
}

/// Coefficients `a0..a5` of the quintic with `y(0)=0, y'(0)=0, y''(0)=k0`
/// and the given endpoint. Closed form of the 3x3 system left after the
/// start conditions fix `a0..a2`.
pub fn quintic_coefficients<R: Real>(k0: R, spec: [R; 4]) -> [R; 6] {
    let [x, y, dy, ddy] = spec;
    let a2 = k0 * 0.5;
    let x2 = x * x;
    let x3 = x2 * x;
    let h0 = y - a2 * x2;
    let h1 = (dy - a2 * x * 2.0) * x;
    let h2 = (ddy - a2 * 2.0) * x2;
    let a3 = (h0 * 10.0 - h1 * 4.0 + h2 * 0.5) / x3;
    let a4 = (h0 * -15.0 + h1 * 7.0 - h2) / (x3 * x);
    let a5 = (h0 * 6.0 - h1 * 3.0 + h2 * 0.5) / (x3 * x2);
    [R::cst(0.0), R::cst(0.0), a2, a3, a4, a5]
}

/// `(y, y', y'')` at `x` by Horner evaluation.
pub fn eval_quintic<R: Real>(a: &[R; 6], x: R) -> (R, R, R) {
    let y = ((((a[5] * x + a[4]) * x + a[3]) * x + a[2]) * x + a[1]) * x + a[0];
    let dy = (((a[5] * 5.0 * x + a[4] * 4.0) * x + a[3] * 3.0) * x + a[2] * 2.0) * x + a[1];
    let ddy = ((a[5] * 20.0 * x + a[4] * 12.0) * x + a[3] * 6.0) * x + a[2] * 2.0;
    (y, dy, ddy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuinticSegment {
    pub coeffs: [f64; 6],
    pub x_end: f64,
    /// Global pose of the segment's local frame.
    pub frame: Pose2,
    pub spec: SegmentSpec,
    pub start_curvature: f64,
}

impl QuinticSegment {
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        eval_quintic(&self.coeffs, x)
    }

    pub fn curvature_at(&self, x: f64) -> f64 {
        let (_, dy, ddy) = self.eval(x);
        graph_curvature(dy, ddy)
    }

    /// Global pose of the path at local abscissa `x`.
    pub fn pose_at(&self, x: f64) -> Pose2 {
        let (y, dy, _) = self.eval(x);
        let [gx, gy] = self.frame.transform_point([x, y]);
        Pose2::new(gx, gy, self.frame.theta + dy.atan())
    }

    /// Global pose of the endpoint with the frame-exact endpoint values.
    pub fn end_pose(&self) -> Pose2 {
        let [gx, gy] = self.frame.transform_point([self.spec.x_end, self.spec.y_end]);
        Pose2::new(gx, gy, self.frame.theta + self.spec.heading_change())
    }

    /// The six boundary-condition residuals.
    pub fn boundary_residuals(&self) -> [f64; 6] {
        let (y0, dy0, ddy0) = self.eval(0.0);
        let (y1, dy1, ddy1) = self.eval(self.x_end);
        [
            y0,
            dy0,
            ddy0 - self.start_curvature,
            y1 - self.spec.y_end,
            dy1 - self.spec.dy,
            ddy1 - self.spec.ddy,
        ]
    }
}

/// Solves one segment in its own frame (frame = identity).
pub fn solve_segment(start_curvature: f64, spec: SegmentSpec) -> Result<QuinticSegment, SplineError> {
    spec.validate()?;
    if !start_curvature.is_finite() {
        return Err(SplineError::NonFinite);
    }
    if spec.x_end < ILL_CONDITIONED_LENGTH {
        log::warn!("segment length {} is ill-conditioned", spec.x_end);
    }
    Ok(QuinticSegment {
        coeffs: quintic_coefficients(start_curvature, spec.to_array()),
        x_end: spec.x_end,
        frame: Pose2::identity(),
        spec,
        start_curvature,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSpline {
    pub segments: Vec<QuinticSegment>,
    pub points_per_segment: usize,
}

impl PathSpline {
    pub fn specs(&self) -> Vec<SegmentSpec> {
        self.segments.iter().map(|s| s.spec).collect()
    }

    pub fn end_pose(&self) -> Pose2 {
        self.segments.last().expect("non-empty path").end_pose()
    }

    pub fn end_curvature(&self) -> f64 {
        self.segments.last().expect("non-empty path").spec.end_curvature()
    }

    pub fn with_points_per_segment(mut self, n: usize) -> Self {
        assert!(n >= 2);
        self.points_per_segment = n;
        self
    }
}

pub fn chain(
    initial: &Configuration,
    params: &VehicleParams,
    specs: &[SegmentSpec],
) -> Result<PathSpline, SplineError> {
    chain_from(
        initial.pose(),
        initial.beta.tan() / params.wheelbase,
        specs,
    )
}

/// Chains segments from a start pose and start curvature.
pub fn chain_from(start: Pose2, start_curvature: f64, specs: &[SegmentSpec]) -> Result<PathSpline, SplineError> {
    if specs.is_empty() {
        return Err(SplineError::Empty);
    }
    let mut frame = start;
    let mut k0 = start_curvature;
    let mut segments = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut seg = solve_segment(k0, *spec)?;
        seg.frame = frame;
        frame = seg.end_pose();
        k0 = spec.end_curvature();
        segments.push(seg);
    }
    Ok(PathSpline {
        segments,
        points_per_segment: SAMPLES_PER_SEGMENT,
    })
}

/// One discretization sample in generic arithmetic.
#[derive(Debug, Clone, Copy)]
pub struct TraceSample<R> {
    pub x: R,
    pub y: R,
    pub cos_h: R,
    pub sin_h: R,
    pub curvature: R,
    /// Chord to the previous sample of the same segment (zero for the first).
    pub chord: R,
}

/// Result of tracing a path in generic arithmetic.
pub struct Trace<R> {
    pub samples: Vec<Vec<TraceSample<R>>>,
    /// Global endpoint `(x, y, heading, curvature)` after each segment.
    pub endpoints: Vec<[R; 4]>,
}

/// Traces chained segments from `(x0, y0, theta0)` with start curvature `k0`.
/// This is the single geometric routine behind both [`discretize`] and the
/// differentiated loss, so values agree bit for bit.
pub fn trace<R: Real>(start: [R; 3], k0: R, specs: &[[R; 4]], points: usize) -> Trace<R> {
    let [mut fx, mut fy, mut ft] = start;
    let mut k = k0;
    let mut samples = Vec::with_capacity(specs.len());
    let mut endpoints = Vec::with_capacity(specs.len());
    let last = (points - 1) as f64;
    for spec in specs {
        let a = quintic_coefficients(k, *spec);
        let (fs, fc) = (ft.sin(), ft.cos());
        let mut seg = Vec::with_capacity(points);
        let mut prev: Option<(R, R)> = None;
        for j in 0..points {
            let lx = spec[0] * (j as f64 / last);
            let (ly, d1, d2) = eval_quintic(&a, lx);
            let x = fx + fc * lx - fs * ly;
            let y = fy + fs * lx + fc * ly;
            // heading = frame + atan(y'); expand cos/sin without atan
            let norm = (d1 * d1 + 1.0).sqrt();
            let (tc, ts) = (R::cst(1.0) / norm, d1 / norm);
            let cos_h = fc * tc - fs * ts;
            let sin_h = fs * tc + fc * ts;
            let chord = match prev {
                Some((px, py)) => (x - px).hypot(y - py),
                None => R::cst(0.0),
            };
            prev = Some((x, y));
            seg.push(TraceSample {
                x,
                y,
                cos_h,
                sin_h,
                curvature: graph_curvature(d1, d2),
                chord,
            });
        }
        let [xe, ye, dye, ddye] = *spec;
        fx = fx + fc * xe - fs * ye;
        fy = fy + fs * xe + fc * ye;
        ft = ft + dye.atan();
        k = graph_curvature(dye, ddye);
        endpoints.push([fx, fy, ft, k]);
        samples.push(seg);
    }
    Trace { samples, endpoints }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub curvature: f64,
    /// Chord length to the previous sample in the same segment.
    pub chord: f64,
}

impl PathSample {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedPath {
    pub segments: Vec<Vec<PathSample>>,
}

impl DiscretizedPath {
    pub fn samples(&self) -> impl Iterator<Item = &PathSample> {
        self.segments.iter().flatten()
    }

    pub fn length(&self) -> f64 {
        self.samples().map(|s| s.chord).sum()
    }

    /// Integral of the absolute heading change along the path.
    pub fn accumulated_turn(&self) -> f64 {
        let mut turn = 0.0;
        let mut prev: Option<f64> = None;
        for s in self.samples() {
            if let Some(h) = prev {
                turn += normalize_angle(s.heading - h).abs();
            }
            prev = Some(s.heading);
        }
        turn
    }

    pub fn max_abs_curvature(&self) -> f64 {
        self.samples().map(|s| s.curvature.abs()).fold(0.0, f64::max)
    }

    /// Sample positions as a polyline, dropping duplicated joint points.
    pub fn polyline(&self) -> Vec<[f64; 2]> {
        let mut out: Vec<[f64; 2]> = Vec::new();
        for s in self.samples() {
            let p = [s.x, s.y];
            if out.last().map_or(true, |q| (q[0] - p[0]).hypot(q[1] - p[1]) > 1e-12) {
                out.push(p);
            }
        }
        out
    }
}

pub fn discretize(path: &PathSpline) -> DiscretizedPath {
    let first = &path.segments[0];
    let specs: Vec<[f64; 4]> = path.segments.iter().map(|s| s.spec.to_array()).collect();
    let tr = trace(
        [first.frame.x, first.frame.y, first.frame.theta],
        first.start_curvature,
        &specs,
        path.points_per_segment,
    );
    DiscretizedPath {
        segments: tr
            .samples
            .into_iter()
            .map(|seg| {
                seg.into_iter()
                    .map(|s| PathSample {
                        x: s.x,
                        y: s.y,
                        heading: s.sin_h.atan2(s.cos_h),
                        curvature: s.curvature,
                        chord: s.chord,
                    })
                    .collect()
            })
            .collect(),
    }
}

/// Vehicle configuration at the end of the path, with `beta = atan(kappa L)`.
pub fn endpoint_configuration(path: &PathSpline, params: &VehicleParams) -> Result<Configuration, SplineError> {
    let pose = path.end_pose();
    let kappa = path.end_curvature();
    let config = Configuration::new((kappa * params.wheelbase).atan(), pose.theta, pose.x, pose.y);
    let limit = curvature_limit(params);
    if kappa.abs() > limit {
        return Err(SplineError::CurvatureExceeded { kappa, limit, config });
    }
    Ok(config)
}

/// Endpoint configuration whether or not the curvature limit holds.
pub fn endpoint_configuration_unchecked(path: &PathSpline, params: &VehicleParams) -> Configuration {
    match endpoint_configuration(path, params) {
        Ok(c) => c,
        Err(SplineError::CurvatureExceeded { config, .. }) => config,
        Err(e) => unreachable!("{e}"),
    }
}
