//! PNG output: upscaled map, characteristic-point paths and reachability dots.

use image::{Rgb, RgbImage};
use nsplan::gridmap::{Cell, OccupancyGrid, ANCHOR_COL, ANCHOR_ROW, GRID_SIZE, RESOLUTION};
use nsplan::kinematics::{footprint_points, VehicleParams};
use nsplan::spline::DiscretizedPath;

/// Guiding point, then the corners FL, FR, RR, RL.
pub const POINT_COLORS: [[u8; 3]; 5] = [[220, 30, 30], [30, 90, 220], [20, 160, 60], [240, 140, 0], [170, 40, 200]];
const GOAL_COLOR: [u8; 3] = [0, 170, 170];

/// Map at `scale` pixels per cell: obstacles black, free space white.
pub fn map_image(grid: &OccupancyGrid, scale: u32) -> RgbImage {
    let n = GRID_SIZE as u32 * scale;
    RgbImage::from_fn(n, n, |c, r| {
        let cell = Cell {
            row: (r / scale) as usize,
            col: (c / scale) as usize,
        };
        if grid.get(cell) {
            Rgb([0, 0, 0])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

/// Continuous pixel coordinates (column, row) of a world point.
pub fn to_pixel(p: [f64; 2], scale: u32) -> (f64, f64) {
    let s = scale as f64 / RESOLUTION;
    (ANCHOR_COL as f64 * scale as f64 - p[1] * s, ANCHOR_ROW as f64 * scale as f64 - p[0] * s)
}

fn put(img: &mut RgbImage, c: f64, r: f64, color: [u8; 3]) {
    let (c, r) = (c.floor(), r.floor());
    if c >= 0.0 && r >= 0.0 && (c as u32) < img.width() && (r as u32) < img.height() {
        img.put_pixel(c as u32, r as u32, Rgb(color));
    }
}

pub fn draw_polyline(img: &mut RgbImage, points: &[[f64; 2]], scale: u32, color: [u8; 3]) {
    for w in points.windows(2) {
        let (c0, r0) = to_pixel(w[0], scale);
        let (c1, r1) = to_pixel(w[1], scale);
        let steps = ((c1 - c0).abs().max((r1 - r0).abs()) * 2.0).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            put(img, c0 + t * (c1 - c0), r0 + t * (r1 - r0), color);
        }
    }
}

pub fn draw_square(img: &mut RgbImage, p: [f64; 2], half: f64, scale: u32, color: [u8; 3]) {
    let (c, r) = to_pixel(p, scale);
    let h = half.round() as i64;
    for dr in -h..=h {
        for dc in -h..=h {
            put(img, c + dc as f64, r + dr as f64, color);
        }
    }
}

/// Paths traced by the guiding point and the four body corners.
pub fn draw_path(img: &mut RgbImage, path: &DiscretizedPath, vehicle: &VehicleParams, scale: u32) {
    let mut traces: [Vec<[f64; 2]>; 5] = Default::default();
    for s in path.samples() {
        for (t, p) in traces.iter_mut().zip(footprint_points(s.pose(), vehicle)) {
            t.push(p);
        }
    }
    for (t, color) in traces.iter().zip(POINT_COLORS) {
        draw_polyline(img, t, scale, color);
    }
}

pub fn draw_goal(img: &mut RgbImage, p: [f64; 2], theta: f64, scale: u32) {
    draw_square(img, p, scale as f64, scale, GOAL_COLOR);
    let tip = [p[0] + theta.cos(), p[1] + theta.sin()];
    draw_polyline(img, &[p, tip], scale, GOAL_COLOR);
}

/// Color of a reachability dot: light for few feasible headings, dark for many.
pub fn heat_color(fraction: f64) -> [u8; 3] {
    let f = fraction.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * f).round() as u8;
    [lerp(255.0, 120.0), lerp(200.0, 0.0), lerp(200.0, 0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_maps_to_the_anchor_cell_corner() {
        assert_eq!(to_pixel([0.0, 0.0], 4), (256.0, 480.0));
        let (c, r) = to_pixel([1.0, 0.0], 1);
        assert_eq!((c, r), (64.0, 115.0));
    }

    #[test]
    fn map_image_dimensions_and_colors() {
        let mut g = OccupancyGrid::empty();
        g.set(Cell { row: 0, col: 1 }, true);
        let img = map_image(&g, 4);
        assert_eq!(img.dimensions(), (512, 512));
        assert_eq!(img.get_pixel(5, 2).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(0, 0).0, [255, 255, 255]);
    }

    #[test]
    fn heat_is_darker_for_more_headings() {
        let sum = |c: [u8; 3]| c.iter().map(|&v| v as u32).sum::<u32>();
        assert!(sum(heat_color(1.0)) < sum(heat_color(0.5)));
        assert!(sum(heat_color(0.5)) < sum(heat_color(0.125)));
    }
}
