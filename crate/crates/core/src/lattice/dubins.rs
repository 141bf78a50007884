//! Shortest forward-only paths with bounded curvature between planar poses.

use std::f64::consts::PI;

use crate::kinematics::{normalize_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DubinsWord {
    Lsl,
    Rsr,
    Lsr,
    Rsl,
    Rlr,
    Lrl,
}

impl DubinsWord {
    pub const ALL: [DubinsWord; 6] = [
        DubinsWord::Lsl,
        DubinsWord::Rsr,
        DubinsWord::Lsr,
        DubinsWord::Rsl,
        DubinsWord::Rlr,
        DubinsWord::Lrl,
    ];

    /// Turn direction of each piece: +1 left, -1 right, 0 straight.
    pub fn steering(self) -> [f64; 3] {
        match self {
            DubinsWord::Lsl => [1.0, 0.0, 1.0],
            DubinsWord::Rsr => [-1.0, 0.0, -1.0],
            DubinsWord::Lsr => [1.0, 0.0, -1.0],
            DubinsWord::Rsl => [-1.0, 0.0, 1.0],
            DubinsWord::Rlr => [-1.0, 1.0, -1.0],
            DubinsWord::Lrl => [1.0, -1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsPath {
    pub word: DubinsWord,
    /// Normalized piece lengths (angles for arcs, distance / rho for straights).
    pub params: [f64; 3],
    pub rho: f64,
}

impl DubinsPath {
    pub fn length(&self) -> f64 {
        self.params.iter().sum::<f64>() * self.rho
    }

    /// Pose after travelling the whole word from `start`.
    pub fn endpoint(&self, start: Pose2) -> Pose2 {
        let mut p = start;
        for (piece, &k) in self.params.iter().zip(self.word.steering().iter()) {
            p = advance(p, piece * self.rho, k / self.rho);
        }
        p
    }
}

/// Moves along a constant-curvature arc (or straight line when `kappa == 0`).
pub fn advance(p: Pose2, length: f64, kappa: f64) -> Pose2 {
    if kappa == 0.0 {
        return Pose2::new(p.x + length * p.theta.cos(), p.y + length * p.theta.sin(), p.theta);
    }
    let r = 1.0 / kappa;
    let th = p.theta + length * kappa;
    Pose2::new(
        p.x + r * (th.sin() - p.theta.sin()),
        p.y - r * (th.cos() - p.theta.cos()),
        th,
    )
}

/// Angle in [0, 2pi). Values within rounding of 2pi map to 0, otherwise a
/// vanishing arc of slightly negative angle becomes a full loop.
fn mod2pi(a: f64) -> f64 {
    let m = a.rem_euclid(2.0 * PI);
    if 2.0 * PI - m < 1e-9 {
        0.0
    } else {
        m
    }
}

/// All admissible words between the poses.
pub fn dubins_candidates(from: Pose2, to: Pose2, rho: f64) -> Vec<DubinsPath> {
    assert!(rho > 0.0, "turning radius must be positive");
    let dx = to.x - from.x;
    let dy = to.y - from.y;
    let d = dx.hypot(dy) / rho;
    let phi = if d > 0.0 { dy.atan2(dx) } else { 0.0 };
    let a = mod2pi(from.theta - phi);
    let b = mod2pi(to.theta - phi);
    let (sa, ca, sb, cb) = (a.sin(), a.cos(), b.sin(), b.cos());
    let cab = (a - b).cos();

    let mut out = Vec::with_capacity(6);
    let mut push = |word, t: f64, p: f64, q: f64| {
        out.push(DubinsPath {
            word,
            params: [t, p, q],
            rho,
        })
    };

    // LSL
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sa - sb);
    if p2 >= 0.0 {
        let tmp = (cb - ca).atan2(d + sa - sb);
        push(DubinsWord::Lsl, mod2pi(tmp - a), p2.sqrt(), mod2pi(b - tmp));
    }
    // RSR
    let p2 = 2.0 + d * d - 2.0 * cab + 2.0 * d * (sb - sa);
    if p2 >= 0.0 {
        let tmp = (ca - cb).atan2(d - sa + sb);
        push(DubinsWord::Rsr, mod2pi(a - tmp), p2.sqrt(), mod2pi(tmp - b));
    }
    // LSR
    let p2 = -2.0 + d * d + 2.0 * cab + 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (-ca - cb).atan2(d + sa + sb) - (-2.0f64).atan2(p);
        push(DubinsWord::Lsr, mod2pi(tmp - a), p, mod2pi(tmp - b));
    }
    // RSL
    let p2 = d * d - 2.0 + 2.0 * cab - 2.0 * d * (sa + sb);
    if p2 >= 0.0 {
        let p = p2.sqrt();
        let tmp = (ca + cb).atan2(d - sa - sb) - 2.0f64.atan2(p);
        push(DubinsWord::Rsl, mod2pi(a - tmp), p, mod2pi(b - tmp));
    }
    // RLR
    let tmp = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sa - sb)) / 8.0;
    if tmp.abs() <= 1.0 {
        let p = mod2pi(2.0 * PI - tmp.acos());
        let t = mod2pi(a - (ca - cb).atan2(d - sa + sb) + 0.5 * p);
        push(DubinsWord::Rlr, t, p, mod2pi(a - b - t + p));
    }
    // LRL
    let tmp = (6.0 - d * d + 2.0 * cab + 2.0 * d * (sb - sa)) / 8.0;
    if tmp.abs() <= 1.0 {
        let p = mod2pi(2.0 * PI - tmp.acos());
        let t = mod2pi(-a - (ca - cb).atan2(d + sa - sb) + 0.5 * p);
        push(DubinsWord::Lrl, t, p, mod2pi(mod2pi(b) - a - t + p));
    }
    out
}

pub fn shortest_dubins(from: Pose2, to: Pose2, rho: f64) -> Option<DubinsPath> {
    dubins_candidates(from, to, rho)
        .into_iter()
        .min_by(|x, y| x.length().total_cmp(&y.length()))
}

/// Length of the shortest Dubins path with turning radius `rho`.
pub fn dubins_distance(from: Pose2, to: Pose2, rho: f64) -> f64 {
    // coincident within rounding: the direction between the points is noise
    if (to.x - from.x).hypot(to.y - from.y) < 1e-9 && normalize_angle(from.theta - to.theta).abs() < 1e-9 {
        return 0.0;
    }
    shortest_dubins(from, to, rho).map_or(f64::INFINITY, |p| p.length())
}
