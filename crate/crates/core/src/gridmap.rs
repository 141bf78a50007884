//! 128x128 occupancy grids at 0.2 m per cell, anchored to the vehicle start.
//!
//! The world origin sits in row 120, column 64 of the image. World +x points
//! up the image (decreasing row) and world +y points left (decreasing
//! column). Row `r` covers `x` in `((119 - r) * 0.2, (120 - r) * 0.2]` and
//! column `c` covers `y` in `((63 - c) * 0.2, (64 - c) * 0.2]`, so the
//! mapped area is `(-1.6, 24.0] x (-12.8, 12.8]`. Anything outside it counts
//! as occupied.

use std::path::Path;

use image::{GrayImage, Luma};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kinematics::{body_boundary_offsets, Pose2, VehicleParams};

pub const GRID_SIZE: usize = 128;
pub const RESOLUTION: f64 = 0.2;
pub const ANCHOR_ROW: usize = 120;
pub const ANCHOR_COL: usize = 64;
pub const MAX_RANDOM_OBSTACLES: usize = 15;
/// Boundary sample spacing for footprint collision checks.
pub const FOOTPRINT_SPACING: f64 = 0.05;

const INV_RES: f64 = 1.0 / RESOLUTION;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("point ({0}, {1}) lies outside the map")]
    OutOfBounds(f64, f64),
    #[error("map must be {GRID_SIZE}x{GRID_SIZE}, got {0}x{1}")]
    BadDimensions(u32, u32),
    #[error("at most {MAX_RANDOM_OBSTACLES} random obstacles, got {0}")]
    TooManyObstacles(usize),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct OccupancyGrid {
    cells: Vec<bool>,
}

impl std::fmt::Debug for OccupancyGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "OccupancyGrid({} occupied)", self.occupied_count())
    }
}

impl Default for OccupancyGrid {
    fn default() -> Self {
        Self::empty()
    }
}

impl OccupancyGrid {
    pub fn empty() -> Self {
        OccupancyGrid {
            cells: vec![false; GRID_SIZE * GRID_SIZE],
        }
    }

    pub fn full() -> Self {
        OccupancyGrid {
            cells: vec![true; GRID_SIZE * GRID_SIZE],
        }
    }

    pub fn get(&self, cell: Cell) -> bool {
        self.cells[cell.row * GRID_SIZE + cell.col]
    }

    pub fn set(&mut self, cell: Cell, occupied: bool) {
        self.cells[cell.row * GRID_SIZE + cell.col] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Row-major occupancy as 0/1 floats.
    pub fn as_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    pub fn cells(&self) -> impl Iterator<Item = (Cell, bool)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .map(|(i, &occ)| (Cell { row: i / GRID_SIZE, col: i % GRID_SIZE }, occ))
    }

    /// Builds a grid from 8-bit gray levels: below 128 is occupied, anything else free.
    pub fn from_gray(image: &GrayImage) -> Result<Self, GridError> {
        if image.width() as usize != GRID_SIZE || image.height() as usize != GRID_SIZE {
            return Err(GridError::BadDimensions(image.width(), image.height()));
        }
        let cells = image.pixels().map(|p| p.0[0] < 128).collect();
        Ok(OccupancyGrid { cells })
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(GRID_SIZE as u32, GRID_SIZE as u32, |c, r| {
            if self.get(Cell { row: r as usize, col: c as usize }) {
                Luma([0])
            } else {
                Luma([255])
            }
        })
    }

    /// Loads a PGM or PNG map (format from the file extension).
    pub fn load(path: &Path) -> Result<Self, GridError> {
        let img = image::open(path)?.into_luma8();
        Self::from_gray(&img)
    }

    pub fn save(&self, path: &Path) -> Result<(), GridError> {
        self.to_gray().save(path)?;
        Ok(())
    }

    pub fn is_occupied(&self, p: [f64; 2]) -> bool {
        match world_to_cell(p) {
            Ok(cell) => self.get(cell),
            Err(_) => true,
        }
    }

    /// Marks every cell whose center lies inside the rectangle.
    pub fn fill_rectangle(&mut self, rect: &Rectangle) {
        let corners = rect.corners();
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for c in &corners {
            xmin = xmin.min(c[0]);
            xmax = xmax.max(c[0]);
            ymin = ymin.min(c[1]);
            ymax = ymax.max(c[1]);
        }
        let row_lo = ((ANCHOR_ROW as f64 - xmax * INV_RES).floor().max(0.0)) as usize;
        let row_hi = ((ANCHOR_ROW as f64 - xmin * INV_RES).floor().min(GRID_SIZE as f64 - 1.0)).max(-1.0);
        let col_lo = ((ANCHOR_COL as f64 - ymax * INV_RES).floor().max(0.0)) as usize;
        let col_hi = ((ANCHOR_COL as f64 - ymin * INV_RES).floor().min(GRID_SIZE as f64 - 1.0)).max(-1.0);
        if row_hi < 0.0 || col_hi < 0.0 {
            return;
        }
        for row in row_lo..=row_hi as usize {
            for col in col_lo..=col_hi as usize {
                let cell = Cell { row, col };
                if rect.contains(cell_center(cell)) {
                    self.set(cell, true);
                }
            }
        }
    }
}

/// `floor` without the libm call; exact for finite values below 2^52.
#[inline]
fn floor_fast(v: f64) -> f64 {
    if !(v.abs() < 4.0e15) {
        return v.floor();
    }
    let t = v as i64 as f64;
    if t > v {
        t - 1.0
    } else {
        t
    }
}

/// Cell containing a world point.
pub fn world_to_cell(p: [f64; 2]) -> Result<Cell, GridError> {
    let r = floor_fast(ANCHOR_ROW as f64 - p[0] * INV_RES);
    let c = floor_fast(ANCHOR_COL as f64 - p[1] * INV_RES);
    let n = GRID_SIZE as f64;
    if !(r >= 0.0 && r < n && c >= 0.0 && c < n) {
        return Err(GridError::OutOfBounds(p[0], p[1]));
    }
    Ok(Cell {
        row: r as usize,
        col: c as usize,
    })
}

pub fn cell_center(cell: Cell) -> [f64; 2] {
    [
        (ANCHOR_ROW as f64 - 0.5 - cell.row as f64) * RESOLUTION,
        (ANCHOR_COL as f64 - 0.5 - cell.col as f64) * RESOLUTION,
    ]
}

/// Boundary-sampled footprint check: the circumference samples (spacing at
/// most 0.2 m) and the guiding point are tested against the grid.
pub fn footprint_collides(grid: &OccupancyGrid, pose: Pose2, params: &VehicleParams) -> bool {
    FootprintChecker::new(params).collides(grid, pose)
}

/// Precomputed body-frame sample points for repeated footprint checks.
#[derive(Debug, Clone)]
pub struct FootprintChecker {
    offsets: Vec<[f64; 2]>,
}

impl FootprintChecker {
    pub fn new(params: &VehicleParams) -> Self {
        let mut offsets = vec![[0.0, 0.0]];
        offsets.extend(body_boundary_offsets(params, FOOTPRINT_SPACING));
        FootprintChecker { offsets }
    }

    pub fn offsets(&self) -> &[[f64; 2]] {
        &self.offsets
    }

    pub fn collides(&self, grid: &OccupancyGrid, pose: Pose2) -> bool {
        self.collides_at(grid, pose.x, pose.y, pose.theta.cos(), pose.theta.sin())
    }

    pub fn collides_at(&self, grid: &OccupancyGrid, x: f64, y: f64, c: f64, s: f64) -> bool {
        self.offsets
            .iter()
            .any(|&[bx, by]| grid.is_occupied([x + c * bx - s * by, y + s * bx + c * by]))
    }
}

/// An oriented rectangle given by center, heading and side lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub center: [f64; 2],
    pub angle: f64,
    pub length: f64,
    pub width: f64,
}

impl Rectangle {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.angle.sin_cos();
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]].map(|[a, b]| {
            [self.center[0] + c * a - s * b, self.center[1] + s * a + c * b]
        })
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let a = c * dx + s * dy;
        let b = -s * dx + c * dy;
        a.abs() <= 0.5 * self.length && b.abs() <= 0.5 * self.width
    }

    /// Rectangle covering the vehicle body at `pose`, grown by `margin` on every side.
    pub fn vehicle_body(pose: Pose2, params: &VehicleParams, margin: f64) -> Self {
        let off = params.body_center_offset();
        let (s, c) = pose.theta.sin_cos();
        Rectangle {
            center: [pose.x + c * off, pose.y + s * off],
            angle: pose.theta,
            length: params.body_length() + 2.0 * margin,
            width: params.width + 2.0 * margin,
        }
    }

    /// Separating-axis overlap test between two convex quadrilaterals.
    pub fn overlaps(&self, other: &Rectangle) -> bool {
        let a = self.corners();
        let b = other.corners();
        for rect in [&a, &b] {
            for i in 0..2 {
                let e = [rect[i + 1][0] - rect[i][0], rect[i + 1][1] - rect[i][1]];
                let axis = [-e[1], e[0]];
                let proj = |pts: &[[f64; 2]; 4]| {
                    pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| {
                        let d = p[0] * axis[0] + p[1] * axis[1];
                        (lo.min(d), hi.max(d))
                    })
                };
                let (alo, ahi) = proj(&a);
                let (blo, bhi) = proj(&b);
                if ahi < blo || bhi < alo {
                    return false;
                }
            }
        }
        true
    }
}

/// Margin kept between random obstacles and the start footprint.
pub const START_CLEARANCE: f64 = 0.5;

/// Adds `count` randomly placed rectangles (sides in [0.4, 3.0] m, any
/// orientation) that stay clear of the vehicle at the origin.
pub fn add_random_obstacles(
    grid: &OccupancyGrid,
    count: usize,
    seed: u64,
    params: &VehicleParams,
) -> Result<OccupancyGrid, GridError> {
    if count > MAX_RANDOM_OBSTACLES {
        return Err(GridError::TooManyObstacles(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_out = Rectangle::vehicle_body(Pose2::identity(), params, START_CLEARANCE);
    let mut out = grid.clone();
    for _ in 0..count {
        let rect = loop {
            let rect = Rectangle {
                center: [rng.gen_range(-1.6..24.0), rng.gen_range(-12.8..12.8)],
                angle: rng.gen_range(0.0..std::f64::consts::PI),
                length: rng.gen_range(0.4..=3.0),
                width: rng.gen_range(0.4..=3.0),
            };
            if !rect.overlaps(&keep_out) {
                break rect;
            }
        };
        out.fill_rectangle(&rect);
    }
    Ok(out)
}

/// Exact distance from a point to a polyline (a single vertex is a point).
pub fn distance_to_polyline(p: [f64; 2], poly: &[[f64; 2]]) -> f64 {
    assert!(!poly.is_empty(), "polyline must be non-empty");
    if poly.len() == 1 {
        return (p[0] - poly[0][0]).hypot(p[1] - poly[0][1]);
    }
    poly.windows(2)
        .map(|w| {
            let (foot, _) = closest_on_segment(p, w[0], w[1]);
            (p[0] - foot[0]).hypot(p[1] - foot[1])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Closest point on segment `ab` to `p` and its parameter in [0, 1].
pub fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> ([f64; 2], f64) {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ([a[0] + t * ab[0], a[1] + t * ab[1]], t)
}

/// Distances from cell centers to the nearest occupied cell center, where
/// the ring of cells just outside the grid counts as occupied.
#[derive(Debug, Clone)]
pub struct ClearanceMap {
    dist: Vec<f64>,
}

impl ClearanceMap {
    pub fn new(grid: &OccupancyGrid) -> Self {
        // exact squared EDT in cell units on a padded grid, separable passes
        let n = GRID_SIZE + 2;
        let inf = 1e20;
        let mut f = vec![inf; n * n];
        for r in 0..n {
            for c in 0..n {
                let border = r == 0 || c == 0 || r == n - 1 || c == n - 1;
                if border || grid.get(Cell { row: r - 1, col: c - 1 }) {
                    f[r * n + c] = 0.0;
                }
            }
        }
        let mut tmp = vec![0.0; n];
        for c in 0..n {
            let col: Vec<f64> = (0..n).map(|r| f[r * n + c]).collect();
            edt_1d(&col, &mut tmp);
            for r in 0..n {
                f[r * n + c] = tmp[r];
            }
        }
        for r in 0..n {
            let row: Vec<f64> = f[r * n..(r + 1) * n].to_vec();
            edt_1d(&row, &mut tmp);
            f[r * n..(r + 1) * n].copy_from_slice(&tmp);
        }
        let mut dist = vec![0.0; GRID_SIZE * GRID_SIZE];
        for r in 0..GRID_SIZE {
            for c in 0..GRID_SIZE {
                dist[r * GRID_SIZE + c] = f[(r + 1) * n + c + 1].sqrt() * RESOLUTION;
            }
        }
        ClearanceMap { dist }
    }

    pub fn at_cell(&self, cell: Cell) -> f64 {
        self.dist[cell.row * GRID_SIZE + cell.col]
    }

    /// Clearance of the cell containing `p`, zero outside the map.
    pub fn at(&self, p: [f64; 2]) -> f64 {
        world_to_cell(p).map_or(0.0, |c| self.at_cell(c))
    }
}

// Felzenszwalb-Huttenlocher lower envelope of parabolas.
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let fq = f[q] + (q * q) as f64;
        let mut s;
        loop {
            let p = v[k];
            s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let d = q as f64 - p as f64;
        *o = d * d + f[p];
    }
}

/// Certifies poses against a grid with a fixed clearance margin: every
/// boundary sample's cell must be at least `margin` away from any occupied
/// cell. A certified pose is collision-free under [`footprint_collides`],
/// and so is any pose whose body points move less than
/// `margin - 2 * half_cell_diagonal`.
#[derive(Debug, Clone)]
pub struct SafetyChecker {
    clearance: ClearanceMap,
    checker: FootprintChecker,
    center_offset: f64,
    body_radius: f64,
    /// Three discs along the body axis that together cover the body.
    cover: [f64; 3],
    cover_radius: f64,
    margin: f64,
}

pub const HALF_CELL_DIAGONAL: f64 = RESOLUTION * std::f64::consts::FRAC_1_SQRT_2;

impl SafetyChecker {
    pub fn new(grid: &OccupancyGrid, params: &VehicleParams, margin: f64) -> Self {
        SafetyChecker {
            clearance: ClearanceMap::new(grid),
            checker: FootprintChecker::new(params),
            center_offset: params.body_center_offset(),
            body_radius: params.body_radius(),
            cover: {
                let l = params.body_length() / 3.0;
                [0, 1, 2].map(|i| -params.rear_overhang + l * (i as f64 + 0.5))
            },
            cover_radius: (params.body_length() / 6.0).hypot(0.5 * params.width),
            margin,
        }
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Center of the disc enclosing the body at a pose.
    pub fn body_center(&self, x: f64, y: f64, c: f64, s: f64) -> [f64; 2] {
        [x + c * self.center_offset, y + s * self.center_offset]
    }

    /// How far beyond the safe threshold the body disc at a pose is. When
    /// positive, every pose whose body center lies closer than this to the
    /// current one is safe as well (the true clearance is 1-Lipschitz).
    pub fn disc_slack(&self, x: f64, y: f64, c: f64, s: f64) -> f64 {
        self.clearance.at(self.body_center(x, y, c, s)) - (self.body_radius + 2.0 * HALF_CELL_DIAGONAL + self.margin)
    }

    pub fn is_safe(&self, x: f64, y: f64, c: f64, s: f64) -> bool {
        self.certify(x, y, c, s).is_some()
    }

    /// Checks a pose and, when it is safe, says how far it may move while
    /// staying safe.
    pub fn certify(&self, x: f64, y: f64, c: f64, s: f64) -> Option<Certificate> {
        let center = self.body_center(x, y, c, s);
        let cert = |slack: f64, lever: f64| Certificate {
            center,
            heading: [c, s],
            slack,
            lever,
        };
        // whole body disc far from everything
        let slack = self.disc_slack(x, y, c, s);
        if slack > 0.0 {
            return Some(cert(slack, 0.0));
        }
        let need = self.cover_radius + 2.0 * HALF_CELL_DIAGONAL + self.margin;
        let slack = self
            .cover
            .iter()
            .map(|&o| self.clearance.at([x + c * o, y + s * o]) - need)
            .fold(f64::INFINITY, f64::min);
        if slack > 0.0 {
            return Some(cert(slack, self.body_radius));
        }
        let mut slack = f64::INFINITY;
        for &[bx, by] in self.checker.offsets() {
            let d = self.clearance.at([x + c * bx - s * by, y + s * bx + c * by]) - self.margin;
            if d <= 0.0 {
                return None;
            }
            slack = slack.min(d);
        }
        Some(cert(slack, self.body_radius))
    }
}

/// A safe pose together with a radius of poses that are safe as well.
#[derive(Debug, Clone, Copy)]
pub struct Certificate {
    center: [f64; 2],
    heading: [f64; 2],
    slack: f64,
    /// Largest distance of a checked body point from the body center.
    lever: f64,
}

impl Certificate {
    /// True when no checked body point of the other pose is farther than the
    /// slack from its position in the certified pose.
    pub fn covers(&self, center: [f64; 2], heading: [f64; 2]) -> bool {
        let shift = (center[0] - self.center[0]).hypot(center[1] - self.center[1]);
        let turn = (heading[0] - self.heading[0]).hypot(heading[1] - self.heading[1]);
        shift + self.lever * turn < self.slack
    }
}

/// Body-filled collision oracle: the rectangle is sampled on a dense
/// lattice, so obstacles entirely inside the body are found too.
pub fn filled_footprint_collides(grid: &OccupancyGrid, pose: Pose2, params: &VehicleParams, step: f64) -> bool {
    let nl = (params.body_length() / step).ceil() as usize;
    let nw = (params.width / step).ceil() as usize;
    for i in 0..=nl {
        for k in 0..=nw {
            let bx = -params.rear_overhang + params.body_length() * i as f64 / nl as f64;
            let by = -0.5 * params.width + params.width * k as f64 / nw as f64;
            if grid.is_occupied(pose.transform_point([bx, by])) {
                return true;
            }
        }
    }
    false
}
