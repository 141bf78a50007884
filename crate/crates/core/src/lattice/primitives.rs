//! The 73 quintic motion primitives: one 2 m straight plus 18 mirrored pairs
//! of 2 m primitives and 18 mirrored pairs of 4 m primitives. Every
//! primitive starts and ends with zero curvature, so primitives chain into
//! curvature-continuous paths.

use crate::kinematics::{curvature_limit, VehicleParams};
use crate::spline::{solve_segment, SegmentSpec};

pub const PRIMITIVE_COUNT: usize = 73;

/// `(heading change, lateral offset)` per length, left-turning half, designed
/// for the Kia Rio III curvature limit.
const SHORT_TABLE: [(f64, f64); 18] = [
    (0.0, 0.05),
    (0.0, 0.1),
    (0.0, 0.15),
    (0.05, 0.0),
    (0.05, 0.05),
    (0.05, 0.1),
    (0.05, 0.15),
    (0.1, 0.05),
    (0.1, 0.1),
    (0.1, 0.15),
    (0.1, 0.2),
    (0.15, 0.1),
    (0.15, 0.15),
    (0.15, 0.2),
    (0.2, 0.15),
    (0.2, 0.2),
    (0.25, 0.2),
    (0.25, 0.25),
];

const LONG_TABLE: [(f64, f64); 18] = [
    (0.0, 0.25),
    (0.0, 0.5),
    (0.1, -0.2),
    (0.1, 0.2),
    (0.1, 0.5),
    (0.2, 0.1),
    (0.2, 0.4),
    (0.2, 0.7),
    (0.3, 0.3),
    (0.3, 0.6),
    (0.3, 0.9),
    (0.4, 0.6),
    (0.4, 0.85),
    (0.4, 1.1),
    (0.5, 0.9),
    (0.5, 1.1),
    (0.5, 1.25),
    (0.55, 1.2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct MotionPrimitive {
    pub spec: SegmentSpec,
    /// Arc length of the primitive.
    pub length: f64,
    pub max_curvature: f64,
}

impl MotionPrimitive {
    fn new(spec: SegmentSpec) -> Self {
        let seg = solve_segment(0.0, spec).expect("primitive lengths are positive");
        let n = 1024;
        let mut length = 0.0;
        let mut max_curvature: f64 = 0.0;
        let mut prev = [0.0, 0.0];
        for j in 0..=n {
            let x = spec.x_end * j as f64 / n as f64;
            let (y, _, _) = seg.eval(x);
            length += (x - prev[0]).hypot(y - prev[1]);
            prev = [x, y];
            max_curvature = max_curvature.max(seg.curvature_at(x).abs());
        }
        MotionPrimitive {
            spec,
            length,
            max_curvature,
        }
    }

    /// Terminal heading change.
    pub fn heading_change(&self) -> f64 {
        self.spec.heading_change()
    }
}

fn feasible_primitive(len: f64, heading: f64, offset: f64, kmax: f64) -> MotionPrimitive {
    let mut scale = 1.0;
    loop {
        let spec = SegmentSpec::new(len, offset * scale, (heading * scale).tan(), 0.0);
        let prim = MotionPrimitive::new(spec);
        if prim.max_curvature <= kmax {
            return prim;
        }
        scale *= 0.95;
    }
}

/// Fraction of the curvature limit primitives may use.
const CURVATURE_USE: f64 = 0.99;

/// Builds the primitive set for a vehicle. The design table is scaled by the
/// vehicle's curvature limit and any entry that still exceeds 99% of the
/// limit is shrunk until it does not.
pub fn generate_primitives(params: &VehicleParams) -> Vec<MotionPrimitive> {
    let kmax = CURVATURE_USE * curvature_limit(params);
    let s = (curvature_limit(params) / curvature_limit(&VehicleParams::kia_rio())).min(1.0);
    let mut out = vec![MotionPrimitive::new(SegmentSpec::straight(2.0))];
    for (len, table) in [(2.0, &SHORT_TABLE), (4.0, &LONG_TABLE)] {
        for &(heading, offset) in table.iter() {
            let left = feasible_primitive(len, heading * s, offset * s, kmax);
            let spec = left.spec;
            let right = MotionPrimitive {
                spec: SegmentSpec::new(spec.x_end, -spec.y_end, -spec.dy, -spec.ddy),
                ..left.clone()
            };
            out.push(left);
            out.push(right);
        }
    }
    debug_assert_eq!(out.len(), PRIMITIVE_COUNT);
    out
}
