//! Binary occupancy-grid world model.
//!
//! Cells hold `1` for navigable water and `0` for obstacles. Cell `(i, j)`
//! is the square of side `cell_size` centered at `origin + (i, j) * cell_size`;
//! `i` grows with world x and `j` with world y. Everything outside the grid
//! extent is treated as obstacle.

use crate::geom::{Pose, Vec2};
use image::ImageFormat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OBSTACLE: u8 = 0;
pub const FREE: u8 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimensions must be positive, got {width}x{height}")]
    ZeroDimensions { width: usize, height: usize },
    #[error("cell size must be positive and finite, got {0}")]
    InvalidCellSize(f64),
    #[error("expected {expected} cells, got {actual}")]
    CellCount { expected: usize, actual: usize },
    #[error("cell value {value} at index {index} is neither 0 nor 1")]
    InvalidCell { index: usize, value: u8 },
    #[error("malformed graymap: {0}")]
    Image(#[from] image::ImageError),
    #[error("point ({x:.3}, {y:.3}) lies outside the grid extent")]
    OutOfBounds { x: f64, y: f64 },
    #[error("cannot build a CDF from an empty sample list")]
    EmptySamples,
    #[error("sample {0} is negative or not finite")]
    InvalidSample(f64),
}

/// Integer cell coordinates. May address cells outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Cell {
    pub i: i64,
    pub j: i64,
}

/// Vessel footprint used for collision checks. The ship position is the
/// rectangle center and the margin is added on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub length: f64,
    pub width: f64,
    pub safety_margin: f64,
}

impl Default for Footprint {
    fn default() -> Self {
        Self {
            length: 15.0,
            width: 4.0,
            safety_margin: 2.0,
        }
    }
}

impl Footprint {
    pub fn new(length: f64, width: f64, safety_margin: f64) -> Self {
        assert!(
            length > 0.0 && width > 0.0 && safety_margin > 0.0,
            "footprint dimensions must be strictly positive"
        );
        Self {
            length,
            width,
            safety_margin,
        }
    }

    pub fn effective_length(&self) -> f64 {
        self.length + 2.0 * self.safety_margin
    }

    pub fn effective_width(&self) -> f64 {
        self.width + 2.0 * self.safety_margin
    }
}

/// Rectangle with arbitrary orientation, stored as center, unit axis and
/// half extents along the axis and its left normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRect {
    pub center: Vec2,
    pub axis: Vec2,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    /// The region swept by `fp` translating from `start` to `end` along the
    /// straight segment between them.
    pub fn swept(start: Pose, end: Vec2, fp: &Footprint) -> Self {
        let delta = end - start.position;
        let len = delta.norm();
        let axis = if len > 1e-9 {
            delta * (1.0 / len)
        } else {
            Vec2::from_angle(start.heading)
        };
        let len = if len > 1e-9 { len } else { 0.0 };
        Self {
            center: start.position + axis * (0.5 * len),
            axis,
            half_length: 0.5 * len + 0.5 * fp.effective_length(),
            half_width: 0.5 * fp.effective_width(),
        }
    }

    pub fn corners(&self) -> [Vec2; 4] {
        let u = self.axis * self.half_length;
        let v = self.axis.perp() * self.half_width;
        [
            self.center + u + v,
            self.center + u - v,
            self.center - u - v,
            self.center - u + v,
        ]
    }

    /// Positive-area overlap with the axis-aligned square of half side `h`
    /// centered at `c` (separating-axis test; touching does not count).
    pub fn overlaps_square(&self, c: Vec2, h: f64) -> bool {
        let d = c - self.center;
        let u = self.axis;
        let v = u.perp();
        let rx = self.half_length * u.x.abs() + self.half_width * v.x.abs();
        if d.x.abs() >= h + rx {
            return false;
        }
        let ry = self.half_length * u.y.abs() + self.half_width * v.y.abs();
        if d.y.abs() >= h + ry {
            return false;
        }
        let su = h * (u.x.abs() + u.y.abs());
        if d.dot(u).abs() >= self.half_length + su {
            return false;
        }
        let sv = h * (v.x.abs() + v.y.abs());
        d.dot(v).abs() < self.half_width + sv
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: Vec2,
    cells: Vec<u8>,
}

impl OccupancyGrid {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: Vec2,
        cells: Vec<u8>,
    ) -> Result<Self, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::ZeroDimensions { width, height });
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        if cells.len() != width * height {
            return Err(GridError::CellCount {
                expected: width * height,
                actual: cells.len(),
            });
        }
        if let Some((index, &value)) = cells.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(GridError::InvalidCell { index, value });
        }
        Ok(Self {
            width,
            height,
            cell_size,
            origin,
            cells,
        })
    }

    /// Uniform grid where every cell holds `value` (0 or 1).
    pub fn filled(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: Vec2,
        value: u8,
    ) -> Result<Self, GridError> {
        Self::new(width, height, cell_size, origin, vec![value; width * height])
    }

    /// Decodes a P2/P5 graymap. Pixels darker than 128 become obstacles; image
    /// row 0 is the top of the map (largest world y).
    pub fn from_pgm(bytes: &[u8], cell_size: f64, origin: Vec2) -> Result<Self, GridError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)?.into_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(GridError::ZeroDimensions {
                width: w,
                height: h,
            });
        }
        let mut cells = vec![OBSTACLE; w * h];
        for (x, y, px) in img.enumerate_pixels() {
            let j = h - 1 - y as usize;
            cells[j * w + x as usize] = if px.0[0] < 128 { OBSTACLE } else { FREE };
        }
        Self::new(w, h, cell_size, origin, cells)
    }

    /// Encodes as a binary (P5) graymap: free = 255, obstacle = 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(if self.cells[j * self.width + i] == FREE {
                    255
                } else {
                    0
                });
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Lower-left and upper-right corners of the covered world area.
    pub fn extent(&self) -> (Vec2, Vec2) {
        let h = 0.5 * self.cell_size;
        let lo = self.origin - Vec2::new(h, h);
        let hi = lo
            + Vec2::new(
                self.width as f64 * self.cell_size,
                self.height as f64 * self.cell_size,
            );
        (lo, hi)
    }

    /// Cell containing `p` without bounds checking.
    pub fn cell_of(&self, p: Vec2) -> Cell {
        let rel = p - self.origin;
        Cell {
            i: (rel.x / self.cell_size + 0.5).floor() as i64,
            j: (rel.y / self.cell_size + 0.5).floor() as i64,
        }
    }

    /// Cell containing `p`, or `None` when `p` is outside the grid.
    pub fn world_to_cell(&self, p: Vec2) -> Option<Cell> {
        let c = self.cell_of(p);
        self.in_bounds(c).then_some(c)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.i >= 0 && c.j >= 0 && (c.i as usize) < self.width && (c.j as usize) < self.height
    }

    pub fn cell_center(&self, c: Cell) -> Vec2 {
        self.origin + Vec2::new(c.i as f64, c.j as f64) * self.cell_size
    }

    /// `true` for in-bounds water cells; everything else is an obstacle.
    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.cells[c.j as usize * self.width + c.i as usize] == FREE
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.cells[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, value: u8) {
        assert!(value <= 1, "cell values are 0 or 1");
        self.cells[j * self.width + i] = value;
    }

    pub fn obstacle_count(&self) -> usize {
        self.cells.iter().filter(|&&v| v == OBSTACLE).count()
    }

    /// Whether `rect` overlaps any obstacle cell or leaves the grid.
    pub fn rect_collides(&self, rect: &OrientedRect) -> bool {
        let corners = rect.corners();
        let (mut lo, mut hi) = (corners[0], corners[0]);
        for c in &corners[1..] {
            lo = Vec2::new(lo.x.min(c.x), lo.y.min(c.y));
            hi = Vec2::new(hi.x.max(c.x), hi.y.max(c.y));
        }
        let a = self.cell_of(lo);
        let b = self.cell_of(hi);
        let h = 0.5 * self.cell_size;
        for j in a.j..=b.j {
            for i in a.i..=b.i {
                let cell = Cell { i, j };
                if !self.is_free(cell) && rect.overlaps_square(self.cell_center(cell), h) {
                    return true;
                }
            }
        }
        false
    }

    /// Whether the margin-inflated footprint, translating in a straight line
    /// from `start` to `end`, touches an obstacle or leaves the map. The sweep
    /// heading is the bearing from start to end, or the start heading when the
    /// points coincide.
    pub fn swept_collision(&self, start: Pose, end: Vec2, fp: &Footprint) -> bool {
        self.rect_collides(&OrientedRect::swept(start, end, fp))
    }

    /// Static footprint overlap at `pose`.
    pub fn footprint_collision(&self, pose: Pose, fp: &Footprint) -> bool {
        self.swept_collision(pose, pose.position, fp)
    }

    /// Euclidean distance from `p` to the nearest obstacle cell center, with
    /// cells beyond the grid extent counted as obstacles.
    pub fn nearest_obstacle_distance(&self, p: Vec2) -> Result<f64, GridError> {
        let (lo, hi) = self.extent();
        if !(p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y) {
            return Err(GridError::OutOfBounds { x: p.x, y: p.y });
        }
        let c0 = self.cell_of(p);
        let mut best = f64::INFINITY;
        let mut r: i64 = 0;
        loop {
            // every cell on ring r is at least (r - 1/2) cells away from p
            if (r as f64 - 0.5) * self.cell_size > best {
                break;
            }
            let mut visit = |i: i64, j: i64| {
                let cell = Cell { i, j };
                if !self.is_free(cell) {
                    best = best.min(self.cell_center(cell).distance(p));
                }
            };
            if r == 0 {
                visit(c0.i, c0.j);
            } else {
                for k in -r..=r {
                    visit(c0.i + k, c0.j - r);
                    visit(c0.i + k, c0.j + r);
                }
                for k in (-r + 1)..r {
                    visit(c0.i - r, c0.j + k);
                    visit(c0.i + r, c0.j + k);
                }
            }
            r += 1;
        }
        Ok(best)
    }
}

/// Convenience wrapper over [`OccupancyGrid::from_pgm`].
pub fn load_grid(bytes: &[u8], cell_size: f64, origin: Vec2) -> Result<OccupancyGrid, GridError> {
    OccupancyGrid::from_pgm(bytes, cell_size, origin)
}

/// Empirical distribution function over nonnegative distance samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    points: Vec<(f64, f64)>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self, GridError> {
        Ok(Self {
            points: distance_cdf(samples)?,
        })
    }

    /// Step points `(value, P[X <= value])`, strictly increasing in value.
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// `P[X <= x]`.
    pub fn at(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|&(v, _)| v <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }
}

/// Sorted distinct sample values paired with the fraction of samples at or
/// below each. The last probability is exactly 1.
pub fn distance_cdf(samples: &[f64]) -> Result<Vec<(f64, f64)>, GridError> {
    if samples.is_empty() {
        return Err(GridError::EmptySamples);
    }
    if let Some(&bad) = samples.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(GridError::InvalidSample(bad));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (k, &v) in sorted.iter().enumerate() {
        let p = if k + 1 == n {
            1.0
        } else {
            (k + 1) as f64 / n as f64
        };
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => out.push((v, p)),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn open(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::filled(w, h, 3.125, Vec2::ZERO, FREE).unwrap()
    }

    fn pgm_ascii(w: usize, h: usize, px: &[u8]) -> Vec<u8> {
        let mut s = format!("P2\n{w} {h}\n255\n");
        for row in px.chunks(w) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s.into_bytes()
    }

    #[test]
    fn load_two_by_two() {
        // [white, white; black, white]: the black pixel is bottom-left
        let bytes = pgm_ascii(2, 2, &[255, 255, 0, 255]);
        let g = load_grid(&bytes, 3.125, Vec2::ZERO).unwrap();
        assert_eq!(g.obstacle_count(), 1);
        assert_eq!(g.get(0, 0), OBSTACLE);
        assert_eq!(g.get(0, 1), FREE);
    }

    #[test]
    fn load_all_white() {
        let bytes = pgm_ascii(64, 64, &vec![255; 64 * 64]);
        let g = load_grid(&bytes, 3.125, Vec2::ZERO).unwrap();
        assert_eq!(g.obstacle_count(), 0);
        assert_eq!((g.width(), g.height()), (64, 64));
    }

    #[test]
    fn load_thresholds_gray_levels() {
        let bytes = pgm_ascii(3, 1, &[127, 128, 200]);
        let g = load_grid(&bytes, 1.0, Vec2::ZERO).unwrap();
        assert_eq!(g.cells(), &[OBSTACLE, FREE, FREE]);
    }

    #[test]
    fn load_rejects_garbage() {
        assert!(load_grid(b"P5\n2 x\n255\n", 1.0, Vec2::ZERO).is_err());
        assert!(load_grid(b"hello", 1.0, Vec2::ZERO).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let mut g = open(5, 3);
        g.set(4, 2, OBSTACLE);
        g.set(0, 0, OBSTACLE);
        let back = load_grid(&g.to_pgm(), 3.125, Vec2::ZERO).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn constructor_invariants() {
        assert!(OccupancyGrid::new(0, 2, 1.0, Vec2::ZERO, vec![]).is_err());
        assert!(OccupancyGrid::new(2, 2, 0.0, Vec2::ZERO, vec![1; 4]).is_err());
        assert!(OccupancyGrid::new(2, 2, 1.0, Vec2::ZERO, vec![1; 3]).is_err());
        assert!(OccupancyGrid::new(2, 2, 1.0, Vec2::ZERO, vec![1, 1, 2, 1]).is_err());
    }

    #[test]
    fn world_to_cell_examples() {
        let g = OccupancyGrid::filled(10, 10, 3.125, Vec2::new(5.0, -2.0), FREE).unwrap();
        assert_eq!(g.world_to_cell(g.origin()), Some(Cell { i: 0, j: 0 }));
        assert_eq!(
            g.world_to_cell(g.origin() + Vec2::new(3.125, 0.0)),
            Some(Cell { i: 1, j: 0 })
        );
        assert_eq!(g.world_to_cell(Vec2::new(1e6, 0.0)), None);
        assert_eq!(g.world_to_cell(Vec2::new(5.0 - 1.6, -2.0)), None);
        // half-open: the lower edge belongs to the cell, the upper edge does not
        assert_eq!(
            g.world_to_cell(g.origin() + Vec2::new(-1.5625, 1.5625)),
            Some(Cell { i: 0, j: 1 })
        );
    }

    #[test]
    fn sweep_in_open_water_is_free() {
        let g = open(40, 40);
        let start = Pose::new(30.0, 30.0, 0.0);
        assert!(!g.swept_collision(start, Vec2::new(80.0, 90.0), &Footprint::default()));
    }

    #[test]
    fn sweep_over_obstacle_midpoint_collides() {
        let mut g = open(40, 40);
        let mid = Vec2::new(60.0, 60.0);
        let c = g.world_to_cell(mid).unwrap();
        g.set(c.i as usize, c.j as usize, OBSTACLE);
        let start = Pose::new(30.0, 30.0, 0.0);
        assert!(g.swept_collision(start, Vec2::new(90.0, 90.0), &Footprint::default()));
    }

    #[test]
    fn sweep_leaving_map_collides() {
        let g = open(20, 20);
        let start = Pose::new(30.0, 30.0, 0.0);
        assert!(g.swept_collision(start, Vec2::new(200.0, 30.0), &Footprint::default()));
        // footprint poking over the edge counts too
        assert!(g.footprint_collision(Pose::new(3.0, 30.0, 0.0), &Footprint::default()));
    }

    #[test]
    fn nearest_distance_examples() {
        let mut g = open(30, 30);
        g.set(10, 15, OBSTACLE);
        let at = g.cell_center(Cell { i: 10, j: 15 });
        assert_eq!(g.nearest_obstacle_distance(at).unwrap(), 0.0);
        let p = g.cell_center(Cell { i: 15, j: 15 });
        assert!((g.nearest_obstacle_distance(p).unwrap() - 5.0 * 3.125).abs() < 1e-12);
        assert!(g.nearest_obstacle_distance(Vec2::new(-50.0, 0.0)).is_err());
    }

    #[test]
    fn nearest_distance_sees_map_border() {
        let g = open(30, 30);
        // cell (2, 15): the virtual cell (-1, 15) is 3 cells away
        let p = g.cell_center(Cell { i: 2, j: 15 });
        assert!((g.nearest_obstacle_distance(p).unwrap() - 3.0 * 3.125).abs() < 1e-12);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(distance_cdf(&[1.0, 1.0, 1.0]).unwrap(), vec![(1.0, 1.0)]);
        let cdf = EmpiricalCdf::new(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cdf.at(2.0), 0.5);
        assert_eq!(cdf.at(0.5), 0.0);
        assert_eq!(cdf.at(10.0), 1.0);
        assert!(distance_cdf(&[]).is_err());
        assert!(distance_cdf(&[1.0, -1.0]).is_err());
        assert!(distance_cdf(&[f64::NAN]).is_err());
    }

    #[test]
    fn cdf_of_uniform_grid_matches_step_function() {
        // values 0.5, 1.0, ..., 10.0 each repeated 3 times
        let samples: Vec<f64> = (1..=20)
            .flat_map(|k| std::iter::repeat(k as f64 * 0.5).take(3))
            .collect();
        let cdf = EmpiricalCdf::new(&samples).unwrap();
        for k in 0..=22 {
            let x = k as f64 * 0.5 + 0.1;
            let expected = samples.iter().filter(|&&s| s <= x).count() as f64 / 60.0;
            assert!((cdf.at(x) - expected).abs() < 1e-15);
        }
        assert_eq!(cdf.points().len(), 20);
    }

    fn random_grid(seed: u64) -> OccupancyGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = open(24, 24);
        for j in 0..24 {
            for i in 0..24 {
                if rng.gen_bool(0.05) {
                    g.set(i, j, OBSTACLE);
                }
            }
        }
        g
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn sweep_is_symmetric_under_reversal(
            seed in 0u64..1000,
            x0 in 5.0f64..70.0, y0 in 5.0f64..70.0,
            x1 in 5.0f64..70.0, y1 in 5.0f64..70.0,
        ) {
            let g = random_grid(seed);
            let a = Vec2::new(x0, y0);
            let b = Vec2::new(x1, y1);
            prop_assume!(a.distance(b) > 1e-3);
            let fp = Footprint::default();
            let fwd = g.swept_collision(Pose { position: a, heading: a.bearing_to(b) }, b, &fp);
            let back = g.swept_collision(Pose { position: b, heading: b.bearing_to(a) }, a, &fp);
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn zero_length_sweep_is_static_check(
            seed in 0u64..1000, x in 5.0f64..70.0, y in 5.0f64..70.0, h in -3.0f64..3.0,
        ) {
            let g = random_grid(seed);
            let pose = Pose::new(x, y, h);
            let fp = Footprint::default();
            let static_rect = OrientedRect {
                center: pose.position,
                axis: Vec2::from_angle(pose.heading),
                half_length: fp.effective_length() / 2.0,
                half_width: fp.effective_width() / 2.0,
            };
            prop_assert_eq!(g.swept_collision(pose, pose.position, &fp), g.rect_collides(&static_rect));
        }

        #[test]
        fn larger_margin_never_frees_a_sweep(
            seed in 0u64..1000,
            x0 in 5.0f64..70.0, y0 in 5.0f64..70.0,
            x1 in 5.0f64..70.0, y1 in 5.0f64..70.0,
            m in 0.1f64..3.0, extra in 0.0f64..3.0,
        ) {
            let g = random_grid(seed);
            let start = Pose::new(x0, y0, 0.3);
            let end = Vec2::new(x1, y1);
            let small = Footprint::new(15.0, 4.0, m);
            let big = Footprint::new(15.0, 4.0, m + extra);
            if g.swept_collision(start, end, &small) {
                prop_assert!(g.swept_collision(start, end, &big));
            }
        }

        #[test]
        fn nearest_distance_is_one_lipschitz(
            seed in 0u64..1000,
            x0 in 0.0f64..70.0, y0 in 0.0f64..70.0,
            x1 in 0.0f64..70.0, y1 in 0.0f64..70.0,
        ) {
            let g = random_grid(seed);
            let p = Vec2::new(x0, y0);
            let q = Vec2::new(x1, y1);
            let dp = g.nearest_obstacle_distance(p).unwrap();
            let dq = g.nearest_obstacle_distance(q).unwrap();
            prop_assert!((dp - dq).abs() <= p.distance(q) + 1e-9);
        }

        #[test]
        fn cdf_is_monotone_and_ends_at_one(samples in proptest::collection::vec(0.0f64..50.0, 1..60)) {
            let pts = distance_cdf(&samples).unwrap();
            for w in pts.windows(2) {
                prop_assert!(w[0].0 < w[1].0);
                prop_assert!(w[0].1 < w[1].1);
            }
            prop_assert_eq!(pts.last().unwrap().1, 1.0);
        }
    }
}
