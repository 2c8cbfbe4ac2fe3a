//! Frenet-frame trajectory planner: quintic lateral and quartic longitudinal
//! polynomials over an arc-length spline reference, rated by jerk, time,
//! terminal-state and obstacle-proximity costs.

use crate::geom::{wrap_angle, Pose, Vec2};
use crate::gridmap::{Footprint, OccupancyGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FrenetError {
    #[error("reference needs at least two waypoints")]
    TooFewWaypoints,
    #[error("duplicate consecutive waypoints at index {0}")]
    DuplicateWaypoint(usize),
    #[error("lateral offset {delta:.2} m exceeds the local curvature radius {radius:.2} m")]
    CurvatureRadius { delta: f64, radius: f64 },
    #[error("projection onto the reference is ambiguous near s = {0:.2} m")]
    AmbiguousProjection(f64),
    #[error("invalid Frenet config: {0}")]
    InvalidConfig(&'static str),
}

/// Natural cubic spline through `(t_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
struct Spline1 {
    t: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

impl Spline1 {
    fn new(t: &[f64], y: &[f64]) -> Self {
        let n = t.len();
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        // tridiagonal system for second-derivative coefficients c, natural ends
        let mut c = vec![0.0; n];
        if n > 2 {
            let m = n - 2;
            let mut diag = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            for k in 0..m {
                let i = k + 1;
                diag[k] = 2.0 * (h[i - 1] + h[i]);
                rhs[k] = 3.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            for k in 1..m {
                let w = h[k] / diag[k - 1];
                diag[k] -= w * h[k];
                rhs[k] -= w * rhs[k - 1];
            }
            for k in (0..m).rev() {
                let upper = if k + 1 < m { h[k + 1] * c[k + 2] } else { 0.0 };
                c[k + 1] = (rhs[k] - upper) / diag[k];
            }
        }
        let mut b = vec![0.0; n - 1];
        let mut d = vec![0.0; n - 1];
        for i in 0..n - 1 {
            b[i] = (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * c[i] + c[i + 1]) / 3.0;
            d[i] = (c[i + 1] - c[i]) / (3.0 * h[i]);
        }
        Self {
            t: t.to_vec(),
            a: y.to_vec(),
            b,
            c,
            d,
        }
    }

    fn segment(&self, t: f64) -> (usize, f64) {
        let n = self.t.len();
        let i = match self.t.partition_point(|&v| v <= t) {
            0 => 0,
            k => (k - 1).min(n - 2),
        };
        (i, t - self.t[i])
    }

    /// Value and first two derivatives.
    fn eval(&self, t: f64) -> [f64; 3] {
        let (i, x) = self.segment(t);
        [
            self.a[i] + x * (self.b[i] + x * (self.c[i] + x * self.d[i])),
            self.b[i] + x * (2.0 * self.c[i] + 3.0 * x * self.d[i]),
            2.0 * self.c[i] + 6.0 * x * self.d[i],
        ]
    }
}

/// Cubic spline through route waypoints, reparameterized by arc length.
/// Queries outside `[0, length]` extrapolate along the end tangents.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    waypoints: Vec<Vec2>,
    sx: Spline1,
    sy: Spline1,
    /// (spline parameter, arc length) table.
    table_u: Vec<f64>,
    table_s: Vec<f64>,
}

const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Builds the arc-length reference through `waypoints`.
pub fn fit_reference(waypoints: &[Vec2]) -> Result<ReferencePath, FrenetError> {
    if waypoints.len() < 2 {
        return Err(FrenetError::TooFewWaypoints);
    }
    let mut u = vec![0.0];
    for (i, w) in waypoints.windows(2).enumerate() {
        let d = w[0].distance(w[1]);
        if d <= 1e-9 {
            return Err(FrenetError::DuplicateWaypoint(i + 1));
        }
        u.push(u[i] + d);
    }
    let xs: Vec<f64> = waypoints.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = waypoints.iter().map(|p| p.y).collect();
    let sx = Spline1::new(&u, &xs);
    let sy = Spline1::new(&u, &ys);
    let total_u = *u.last().unwrap();
    let intervals = ((total_u / 0.25).ceil() as usize).max(200);
    let speed = |t: f64| sx.eval(t)[1].hypot(sy.eval(t)[1]);
    let mut table_u = Vec::with_capacity(intervals + 1);
    let mut table_s = Vec::with_capacity(intervals + 1);
    table_u.push(0.0);
    table_s.push(0.0);
    for k in 0..intervals {
        let a = total_u * k as f64 / intervals as f64;
        let b = total_u * (k + 1) as f64 / intervals as f64;
        let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
        let seg: f64 = GL5.iter().map(|(x, w)| w * speed(mid + half * x)).sum::<f64>() * half;
        table_u.push(b);
        table_s.push(table_s[k] + seg);
    }
    Ok(ReferencePath {
        waypoints: waypoints.to_vec(),
        sx,
        sy,
        table_u,
        table_s,
    })
}

impl ReferencePath {
    pub fn length(&self) -> f64 {
        *self.table_s.last().unwrap()
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    fn param_at(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let k = self.table_s.partition_point(|&v| v < s).clamp(1, self.table_s.len() - 1);
        let (s0, s1) = (self.table_s[k - 1], self.table_s[k]);
        let (u0, u1) = (self.table_u[k - 1], self.table_u[k]);
        if s1 > s0 {
            u0 + (u1 - u0) * (s - s0) / (s1 - s0)
        } else {
            u0
        }
    }

    fn derivs(&self, s: f64) -> ([f64; 3], [f64; 3]) {
        let u = self.param_at(s);
        (self.sx.eval(u), self.sy.eval(u))
    }

    pub fn position(&self, s: f64) -> Vec2 {
        let l = self.length();
        let clamped = s.clamp(0.0, l);
        let (x, y) = self.derivs(clamped);
        let p = Vec2::new(x[0], y[0]);
        if s == clamped {
            p
        } else {
            p + self.tangent(clamped) * (s - clamped)
        }
    }

    /// Unit tangent.
    pub fn tangent(&self, s: f64) -> Vec2 {
        let (x, y) = self.derivs(s.clamp(0.0, self.length()));
        let v = Vec2::new(x[1], y[1]);
        v * (1.0 / v.norm())
    }

    /// Left-hand unit normal.
    pub fn normal(&self, s: f64) -> Vec2 {
        self.tangent(s).perp()
    }

    pub fn heading(&self, s: f64) -> f64 {
        self.tangent(s).angle()
    }

    /// Signed curvature, positive for left turns; zero beyond the ends.
    pub fn curvature(&self, s: f64) -> f64 {
        if s < 0.0 || s > self.length() {
            return 0.0;
        }
        let (x, y) = self.derivs(s);
        let num = x[1] * y[2] - y[1] * x[2];
        num / (x[1] * x[1] + y[1] * y[1]).powf(1.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub sigma: f64,
    pub sigma_d: f64,
    pub sigma_dd: f64,
    pub delta: f64,
    pub delta_d: f64,
    pub delta_dd: f64,
}

/// World position and heading of a Frenet state.
pub fn frenet_to_world(reference: &ReferencePath, fs: &FrenetState) -> Result<Pose, FrenetError> {
    let k = reference.curvature(fs.sigma);
    if k != 0.0 && fs.delta * k >= 1.0 {
        return Err(FrenetError::CurvatureRadius {
            delta: fs.delta,
            radius: 1.0 / k.abs(),
        });
    }
    let t = reference.tangent(fs.sigma);
    let n = t.perp();
    let p = reference.position(fs.sigma) + n * fs.delta;
    let v = t * (fs.sigma_d * (1.0 - k * fs.delta)) + n * fs.delta_d;
    let heading = if v.norm() > 1e-12 { v.angle() } else { t.angle() };
    Ok(Pose {
        position: p,
        heading,
    })
}

/// Projects a pose moving at `speed` onto the reference. Accelerations are
/// taken as zero.
pub fn world_to_frenet(reference: &ReferencePath, pose: Pose, speed: f64) -> Result<FrenetState, FrenetError> {
    let p = pose.position;
    let l = reference.length();
    let step = (l / 2000.0).clamp(0.05, 1.0);
    let n = (l / step).ceil() as usize;
    let dist = |s: f64| reference.position(s).distance(p);
    let samples: Vec<(f64, f64)> = (0..=n)
        .map(|k| {
            let s = (k as f64 * step).min(l);
            (s, dist(s))
        })
        .collect();
    // local minima of the sampled distance, refined by golden-section search
    let mut minima: Vec<(f64, f64)> = Vec::new();
    for k in 0..samples.len() {
        let left = if k > 0 { samples[k - 1].1 } else { f64::INFINITY };
        let right = samples.get(k + 1).map_or(f64::INFINITY, |v| v.1);
        if samples[k].1 <= left && samples[k].1 <= right {
            let lo = (samples[k].0 - step).max(0.0);
            let hi = (samples[k].0 + step).min(l);
            let s = golden_min(dist, lo, hi, 1e-4);
            minima.push((s, dist(s)));
        }
    }
    let (s_best, d_best) = minima
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one sample is a minimum");
    let tie = minima
        .iter()
        .any(|&(s, d)| (s - s_best).abs() > 1.0 && (d - d_best).abs() < 1e-6);
    if tie {
        return Err(FrenetError::AmbiguousProjection(s_best));
    }
    let t = reference.tangent(s_best);
    let n = t.perp();
    let delta = (p - reference.position(s_best)).dot(n);
    let k = reference.curvature(s_best);
    let rel = wrap_angle(pose.heading - t.angle());
    let scale = 1.0 - k * delta;
    if scale <= 0.0 {
        return Err(FrenetError::CurvatureRadius {
            delta,
            radius: 1.0 / k.abs(),
        });
    }
    Ok(FrenetState {
        sigma: s_best,
        sigma_d: speed * rel.cos() / scale,
        sigma_dd: 0.0,
        delta,
        delta_d: speed * rel.sin(),
        delta_dd: 0.0,
    })
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let m = (a + b) / 2.0;
    // the bracket ends may beat the interior at a clamped boundary
    [a, m, b]
        .into_iter()
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap()
}

/// Polynomial of degree ≤ 5 in time, ascending coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Poly5 {
    pub c: [f64; 6],
}

impl Poly5 {
    pub fn eval(&self, t: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    /// k-th time derivative at `t`.
    pub fn deriv(&self, k: usize, t: f64) -> f64 {
        let mut out = 0.0;
        let mut tp = 1.0;
        for i in k..6 {
            let falling: f64 = (i - k + 1..=i).map(|v| v as f64).product();
            out += self.c[i] * falling * tp;
            tp *= t;
        }
        out
    }

    /// Quintic meeting position, velocity and acceleration at both ends.
    pub fn quintic(start: [f64; 3], end: [f64; 3], t_end: f64) -> Self {
        let [p0, v0, a0] = start;
        let [p1, v1, a1] = end;
        let t = t_end;
        let b1 = p1 - (p0 + v0 * t + a0 * t * t / 2.0);
        let b2 = v1 - (v0 + a0 * t);
        let b3 = a1 - a0;
        Self {
            c: [
                p0,
                v0,
                a0 / 2.0,
                (10.0 * b1 - 4.0 * b2 * t + b3 * t * t / 2.0) / t.powi(3),
                (-15.0 * b1 + 7.0 * b2 * t - b3 * t * t) / t.powi(4),
                (6.0 * b1 - 3.0 * b2 * t + b3 * t * t / 2.0) / t.powi(5),
            ],
        }
    }

    /// Quartic with given start state, end velocity and end acceleration;
    /// the end position is free.
    pub fn quartic(start: [f64; 3], end_vel: f64, end_acc: f64, t_end: f64) -> Self {
        let [p0, v0, a0] = start;
        let t = t_end;
        let b2 = end_vel - (v0 + a0 * t);
        let b3 = end_acc - a0;
        Self {
            c: [
                p0,
                v0,
                a0 / 2.0,
                (3.0 * b2 - b3 * t) / (3.0 * t * t),
                (b3 * t - 2.0 * b2) / (4.0 * t.powi(3)),
                0.0,
            ],
        }
    }
}

/// ∫₀ᵀ (p⃛(t))² dt in closed form.
pub fn jerk_cost(poly: &Poly5, t_end: f64) -> f64 {
    // p⃛ = a + b·t + c·t²
    let a = 6.0 * poly.c[3];
    let b = 24.0 * poly.c[4];
    let c = 60.0 * poly.c[5];
    let t = t_end;
    a * a * t + a * b * t.powi(2) + (b * b + 2.0 * a * c) * t.powi(3) / 3.0 + b * c * t.powi(4) / 2.0
        + c * c * t.powi(5) / 5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrenetConfig {
    pub k_lat: f64,
    pub k_lon: f64,
    pub k_col: f64,
    pub k_j: f64,
    pub k_t: f64,
    pub k_delta: f64,
    pub k_sigma: f64,
    pub k_d: f64,
    pub target_speed: f64,
    pub t_end_grid: Vec<f64>,
    pub delta_end_grid: Vec<f64>,
    /// End speeds as multiples of `target_speed`.
    pub speed_factors: Vec<f64>,
    pub max_curvature: f64,
    pub max_speed: f64,
    pub corridor_half_width: f64,
    pub sample_dt: f64,
    /// Trajectory samples between emitted waypoints.
    pub waypoint_stride: usize,
}

impl Default for FrenetConfig {
    fn default() -> Self {
        Self {
            k_lat: 1.0,
            k_lon: 1.0,
            k_col: 1.0,
            k_j: 0.1,
            k_t: 0.1,
            k_delta: 1.0,
            k_sigma: 1.0,
            k_d: 10.0,
            target_speed: 2.0,
            t_end_grid: vec![30.0, 40.0, 50.0],
            delta_end_grid: (-6..=6).map(|k| k as f64 * 10.0).collect(),
            speed_factors: vec![0.5, 1.0],
            max_curvature: 0.05,
            max_speed: 3.0,
            corridor_half_width: 60.0,
            sample_dt: 2.5,
            waypoint_stride: 2,
        }
    }
}

impl FrenetConfig {
    pub fn validate(&self) -> Result<(), FrenetError> {
        let weights = [
            self.k_lat,
            self.k_lon,
            self.k_col,
            self.k_j,
            self.k_t,
            self.k_delta,
            self.k_sigma,
            self.k_d,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(FrenetError::InvalidConfig("weights must be nonnegative"));
        }
        if self.t_end_grid.is_empty() || self.delta_end_grid.is_empty() || self.speed_factors.is_empty() {
            return Err(FrenetError::InvalidConfig("sampling grids must be nonempty"));
        }
        if self.t_end_grid.iter().any(|t| !(*t > 0.0)) {
            return Err(FrenetError::InvalidConfig("t_end values must be positive"));
        }
        if !(self.sample_dt > 0.0) || self.waypoint_stride == 0 {
            return Err(FrenetError::InvalidConfig(
                "sample_dt and waypoint_stride must be positive",
            ));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub lateral: f64,
    pub longitudinal: f64,
    pub collision: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Invalid {
    Collision,
    Speed,
    Curvature,
    Corridor,
    Projection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrenetCandidate {
    pub index: usize,
    pub t_end: f64,
    pub delta_end: f64,
    pub sigma_d_end: f64,
    pub delta_poly: Poly5,
    pub sigma_poly: Poly5,
    pub times: Vec<f64>,
    pub states: Vec<FrenetState>,
    /// Empty when a sample could not be mapped to the world.
    pub world: Vec<Pose>,
}

impl FrenetCandidate {
    pub fn state_at(&self, t: f64) -> FrenetState {
        FrenetState {
            sigma: self.sigma_poly.eval(t),
            sigma_d: self.sigma_poly.deriv(1, t),
            sigma_dd: self.sigma_poly.deriv(2, t),
            delta: self.delta_poly.eval(t),
            delta_d: self.delta_poly.deriv(1, t),
            delta_dd: self.delta_poly.deriv(2, t),
        }
    }
}

/// Sample times 0, dt, 2dt, … up to and including `t_end`.
pub fn sample_times(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt - 1e-9).ceil() as usize;
    let mut ts: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    ts.push(t_end);
    ts
}

/// One candidate per (t_end, δ_end, σ̇_end), in that nesting order.
pub fn generate_candidates(
    fs: &FrenetState,
    reference: &ReferencePath,
    cfg: &FrenetConfig,
) -> Vec<FrenetCandidate> {
    let mut out = Vec::new();
    for &t_end in &cfg.t_end_grid {
        for &delta_end in &cfg.delta_end_grid {
            for &factor in &cfg.speed_factors {
                let sigma_d_end = factor * cfg.target_speed;
                let delta_poly = Poly5::quintic(
                    [fs.delta, fs.delta_d, fs.delta_dd],
                    [delta_end, 0.0, 0.0],
                    t_end,
                );
                let sigma_poly =
                    Poly5::quartic([fs.sigma, fs.sigma_d, fs.sigma_dd], sigma_d_end, 0.0, t_end);
                let mut c = FrenetCandidate {
                    index: out.len(),
                    t_end,
                    delta_end,
                    sigma_d_end,
                    delta_poly,
                    sigma_poly,
                    times: sample_times(t_end, cfg.sample_dt),
                    states: Vec::new(),
                    world: Vec::new(),
                };
                c.states = c.times.iter().map(|&t| c.state_at(t)).collect();
                c.world = c
                    .states
                    .iter()
                    .map(|s| frenet_to_world(reference, s))
                    .collect::<Result<Vec<_>, _>>()
                    .unwrap_or_default();
                out.push(c);
            }
        }
    }
    out
}

/// Σ over colliding trajectories of exp(K_D − |δ_end − δ_end(T)|).
pub fn collision_cost(candidate: &FrenetCandidate, colliding: &[&FrenetCandidate], k_d: f64) -> f64 {
    colliding
        .iter()
        .map(|t| (k_d - (candidate.delta_end - t.delta_end).abs()).exp())
        .sum()
}

pub fn total_cost(candidate: &FrenetCandidate, colliding: &[&FrenetCandidate], cfg: &FrenetConfig) -> CostBreakdown {
    let lateral = cfg.k_j * jerk_cost(&candidate.delta_poly, candidate.t_end)
        + cfg.k_t * candidate.t_end
        + cfg.k_delta * candidate.delta_end * candidate.delta_end;
    let dv = candidate.sigma_d_end - cfg.target_speed;
    let longitudinal = cfg.k_j * jerk_cost(&candidate.sigma_poly, candidate.t_end)
        + cfg.k_t * candidate.t_end
        + cfg.k_sigma * dv * dv;
    let collision = collision_cost(candidate, colliding, cfg.k_d);
    CostBreakdown {
        lateral,
        longitudinal,
        collision,
        total: cfg.k_lat * lateral + cfg.k_lon * longitudinal + cfg.k_col * collision,
    }
}

/// Speed along the world trajectory at a Frenet state.
fn world_speed(reference: &ReferencePath, s: &FrenetState) -> f64 {
    let k = reference.curvature(s.sigma);
    (s.sigma_d * (1.0 - k * s.delta)).hypot(s.delta_d)
}

/// Curvature of the world trajectory at a Frenet state, from the time
/// derivatives of the world position.
fn world_curvature(reference: &ReferencePath, c: &FrenetCandidate, t: f64) -> f64 {
    let h = 1e-3;
    let pos = |t: f64| {
        let st = c.state_at(t);
        reference.position(st.sigma) + reference.normal(st.sigma) * st.delta
    };
    let (a, b, m) = (pos(t - h), pos(t + h), pos(t));
    let v = (b - a) * (1.0 / (2.0 * h));
    let acc = (a + b - m * 2.0) * (1.0 / (h * h));
    let speed = v.norm();
    if speed < 0.1 {
        return 0.0;
    }
    v.cross(acc).abs() / speed.powi(3)
}

pub fn check_validity(
    candidate: &FrenetCandidate,
    reference: &ReferencePath,
    grid: &OccupancyGrid,
    fp: &Footprint,
    cfg: &FrenetConfig,
) -> Result<(), Invalid> {
    if candidate.world.len() != candidate.states.len() {
        return Err(Invalid::Projection);
    }
    if candidate
        .states
        .iter()
        .any(|s| s.delta.abs() > cfg.corridor_half_width + 1e-9)
    {
        return Err(Invalid::Corridor);
    }
    if candidate
        .states
        .iter()
        .any(|s| world_speed(reference, s) > cfg.max_speed)
    {
        return Err(Invalid::Speed);
    }
    if candidate
        .times
        .iter()
        .any(|&t| world_curvature(reference, candidate, t) > cfg.max_curvature)
    {
        return Err(Invalid::Curvature);
    }
    for w in candidate.world.windows(2) {
        if grid.swept_collision(w[0], w[1].position, fp) {
            return Err(Invalid::Collision);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatedCandidate {
    pub candidate: FrenetCandidate,
    pub validity: Result<(), Invalid>,
    pub cost: CostBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrenetOutcome {
    Waypoints {
        waypoints: Vec<Vec2>,
        chosen: usize,
        cost: CostBreakdown,
    },
    Failure {
        reason: String,
    },
}

/// Generates, checks and costs every candidate.
pub fn rate_candidates(
    fs: &FrenetState,
    reference: &ReferencePath,
    grid: &OccupancyGrid,
    fp: &Footprint,
    cfg: &FrenetConfig,
) -> Vec<RatedCandidate> {
    let cands = generate_candidates(fs, reference, cfg);
    let validity: Vec<Result<(), Invalid>> = cands
        .par_iter()
        .map(|c| check_validity(c, reference, grid, fp, cfg))
        .collect();
    let colliding: Vec<&FrenetCandidate> = cands
        .iter()
        .zip(&validity)
        .filter(|(_, v)| **v == Err(Invalid::Collision))
        .map(|(c, _)| c)
        .collect();
    let costs: Vec<CostBreakdown> = cands.iter().map(|c| total_cost(c, &colliding, cfg)).collect();
    cands
        .into_iter()
        .zip(validity)
        .zip(costs)
        .map(|((candidate, validity), cost)| RatedCandidate {
            candidate,
            validity,
            cost,
        })
        .collect()
}

/// Index of the cheapest valid candidate; generation order breaks ties.
pub fn select_min_cost(rated: &[RatedCandidate]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in rated.iter().enumerate() {
        if r.validity.is_err() {
            continue;
        }
        if best.map_or(true, |b| r.cost.total < rated[b].cost.total) {
            best = Some(i);
        }
    }
    best
}

/// One Frenet planning cycle from the ship's pose and speed.
pub fn plan_frenet(
    pose: Pose,
    speed: f64,
    reference: &ReferencePath,
    grid: &OccupancyGrid,
    fp: &Footprint,
    cfg: &FrenetConfig,
) -> FrenetOutcome {
    if let Err(e) = cfg.validate() {
        return FrenetOutcome::Failure {
            reason: e.to_string(),
        };
    }
    let fs = match world_to_frenet(reference, pose, speed) {
        Ok(fs) => fs,
        Err(e) => {
            return FrenetOutcome::Failure {
                reason: format!("projection failed: {e}"),
            }
        }
    };
    let rated = rate_candidates(&fs, reference, grid, fp, cfg);
    let Some(best) = select_min_cost(&rated) else {
        return FrenetOutcome::Failure {
            reason: "no valid candidate trajectory".to_string(),
        };
    };
    let c = &rated[best];
    let waypoints = c
        .candidate
        .world
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(i, _)| i % cfg.waypoint_stride == 0 || *i + 1 == c.candidate.world.len())
        .map(|(_, p)| p.position)
        .collect();
    FrenetOutcome::Waypoints {
        waypoints,
        chosen: best,
        cost: c.cost,
    }
}
