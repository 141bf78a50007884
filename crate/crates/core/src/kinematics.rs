//! Car-like vehicle model: parameters, configurations, footprint geometry and
//! planar frame transforms.
//!
//! The body frame has +x pointing forward from the rear-axle center (the
//! guiding point) and +y to the left.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dual::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid vehicle parameter `{name}` = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("curvature {kappa} exceeds the limit {limit}")]
    CurvatureExceeded { kappa: f64, limit: f64 },
}

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// Distance between axles.
    pub wheelbase: f64,
    /// Rear axle to rear bumper.
    pub rear_overhang: f64,
    /// Rear axle to front bumper.
    pub front_overhang: f64,
    pub width: f64,
    pub max_steering: f64,
}

impl VehicleParams {
    pub fn new(
        wheelbase: f64,
        rear_overhang: f64,
        front_overhang: f64,
        width: f64,
        max_steering: f64,
    ) -> Result<Self, KinematicsError> {
        let p = VehicleParams {
            wheelbase,
            rear_overhang,
            front_overhang,
            width,
            max_steering,
        };
        p.validate()?;
        Ok(p)
    }

    /// Kia Rio III dimensions.
    pub fn kia_rio() -> Self {
        VehicleParams {
            wheelbase: 2.8,
            rear_overhang: 0.67,
            front_overhang: 3.375,
            width: 1.72,
            max_steering: 0.57,
        }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let fields = [
            ("wheelbase", self.wheelbase),
            ("rear_overhang", self.rear_overhang),
            ("front_overhang", self.front_overhang),
            ("width", self.width),
            ("max_steering", self.max_steering),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(KinematicsError::InvalidParam { name, value });
            }
        }
        if self.max_steering >= PI / 2.0 {
            return Err(KinematicsError::InvalidParam {
                name: "max_steering",
                value: self.max_steering,
            });
        }
        Ok(())
    }

    pub fn body_length(&self) -> f64 {
        self.rear_overhang + self.front_overhang
    }

    /// Center of the body rectangle in the body frame (on the x axis).
    pub fn body_center_offset(&self) -> f64 {
        0.5 * (self.front_overhang - self.rear_overhang)
    }

    /// Radius of the smallest circle around the body center containing the body.
    pub fn body_radius(&self) -> f64 {
        (0.5 * self.body_length()).hypot(0.5 * self.width)
    }

    /// Body-frame characteristic points: guiding point, then the corners
    /// front-left, front-right, rear-right, rear-left.
    pub fn characteristic_offsets(&self) -> [[f64; 2]; 5] {
        let hw = 0.5 * self.width;
        [
            [0.0, 0.0],
            [self.front_overhang, hw],
            [self.front_overhang, -hw],
            [-self.rear_overhang, -hw],
            [-self.rear_overhang, hw],
        ]
    }
}

/// Vehicle configuration `[beta, theta, x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Configuration {
    pub beta: f64,
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

impl Configuration {
    pub fn new(beta: f64, theta: f64, x: f64, y: f64) -> Self {
        Configuration {
            beta,
            theta: normalize_angle(theta),
            x,
            y,
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2::default()
    }

    /// Maps a point from this frame into the parent frame.
    pub fn transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        [self.x + c * p[0] - s * p[1], self.y + s * p[0] + c * p[1]]
    }

    /// Maps a parent-frame point into this frame.
    pub fn inverse_transform_point(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.theta.sin_cos();
        let dx = p[0] - self.x;
        let dy = p[1] - self.y;
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

/// Pose of `local` (expressed in `frame`) in the parent frame.
pub fn compose(frame: Pose2, local: Pose2) -> Pose2 {
    let [x, y] = frame.transform_point([local.x, local.y]);
    Pose2::new(x, y, frame.theta + local.theta)
}

/// Pose of `global` expressed in `frame`.
pub fn to_local(frame: Pose2, global: Pose2) -> Pose2 {
    let [x, y] = frame.inverse_transform_point([global.x, global.y]);
    Pose2::new(x, y, global.theta - frame.theta)
}

pub fn curvature_limit(params: &VehicleParams) -> f64 {
    params.max_steering.tan() / params.wheelbase
}

pub fn steering_for_curvature(kappa: f64, params: &VehicleParams) -> Result<f64, KinematicsError> {
    let limit = curvature_limit(params);
    // one ulp of slack so the limit itself round-trips
    if kappa.abs() > limit * (1.0 + 4.0 * f64::EPSILON) {
        return Err(KinematicsError::CurvatureExceeded { kappa, limit });
    }
    Ok((kappa * params.wheelbase).atan())
}

/// Characteristic points at a pose given as position and heading cosine/sine.
/// Generic so the loss can differentiate through it.
pub fn characteristic_points_at<R: Real>(
    x: R,
    y: R,
    cos_t: R,
    sin_t: R,
    params: &VehicleParams,
) -> [[R; 2]; 5] {
    params.characteristic_offsets().map(|[bx, by]| {
        [
            x + cos_t * bx - sin_t * by,
            y + sin_t * bx + cos_t * by,
        ]
    })
}

/// Guiding point followed by the four body corners
/// `[guiding, front-left, front-right, rear-right, rear-left]`.
pub fn footprint_points(pose: Pose2, params: &VehicleParams) -> [[f64; 2]; 5] {
    let (s, c) = pose.theta.sin_cos();
    characteristic_points_at(pose.x, pose.y, c, s, params)
}

/// Points along the boundary of a closed polygon, consecutive spacing at most
/// `max_spacing`. Every vertex is included.
pub fn polygon_boundary_samples(vertices: &[[f64; 2]], max_spacing: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let n = vertices.len();
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let pieces = ((len / max_spacing).ceil() as usize).max(1);
        for k in 0..pieces {
            let t = k as f64 / pieces as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Body-frame boundary samples of the vehicle rectangle, starting at the
/// front-left corner.
pub fn body_boundary_offsets(params: &VehicleParams, max_spacing: f64) -> Vec<[f64; 2]> {
    let offs = params.characteristic_offsets();
    polygon_boundary_samples(&offs[1..], max_spacing)
}

pub fn circumference_samples(pose: Pose2, params: &VehicleParams, max_spacing: f64) -> Vec<[f64; 2]> {
    assert!(max_spacing > 0.0, "max_spacing must be positive");
    body_boundary_offsets(params, max_spacing)
        .into_iter()
        .map(|p| pose.transform_point(p))
        .collect()
}
