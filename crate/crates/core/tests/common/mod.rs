//! Independent reference implementations and the randomized suites that
//! compare the library against them. Each suite returns a one-line summary
//! on success and a description of the first disagreement on failure.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use waternav::agent::{log_prob, ppo_gradient, ppo_objective, total_loss, MlpParams, PpoConfig, RolloutBatch, Transition, FEATURE_DIM};
use waternav::frenetplan::{jerk_cost, Poly5};
use waternav::geom::{Pose, Vec2};
use waternav::globalplan::{dijkstra, PlanError, WaterwayGraph};
use waternav::gridmap::{Footprint, OccupancyGrid, FREE, OBSTACLE};
use waternav::mprl::n_step_return;

pub type SuiteResult = Result<String, String>;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- returns

pub fn brute_force_return(rewards: &[f64], terminal: bool, bootstrap: f64, gamma: f64) -> f64 {
    let mut g: f64 = rewards.iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum();
    if !terminal {
        g += gamma.powi(rewards.len() as i32) * bootstrap;
    }
    g
}

pub fn n_step_return_suite(cases: usize) -> SuiteResult {
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = r.gen_range(0..=25);
        let rewards: Vec<f64> = (0..n).map(|_| r.gen_range(-21.0..12.0)).collect();
        let terminal = r.gen_bool(0.3);
        let v = r.gen_range(-50.0..150.0);
        let gamma = r.gen_range(0.5..=1.0);
        let got = n_step_return(&rewards, terminal, v, gamma);
        let want = brute_force_return(&rewards, terminal, v, gamma);
        let err = (got - want).abs();
        worst = worst.max(err);
        if err > 1e-9 {
            return Err(format!("case {case}: {got} vs {want}"));
        }
    }
    Ok(format!("{cases} cases, max abs error {worst:.1e}"))
}

// ---------------------------------------------------------------- dijkstra

/// Cheapest simple path by enumerating every one; `None` if unreachable.
pub fn exhaustive_shortest(pts: &[Vec2], adj: &[Vec<usize>], src: usize, dst: usize) -> Option<(f64, Vec<usize>)> {
    fn dfs(
        pts: &[Vec2],
        adj: &[Vec<usize>],
        at: usize,
        dst: usize,
        path: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if at == dst {
            let c = path_len(pts, path);
            if best.as_ref().map_or(true, |(b, _)| c < *b) {
                *best = Some((c, path.clone()));
            }
            return;
        }
        for &nb in &adj[at] {
            if !path.contains(&nb) {
                path.push(nb);
                dfs(pts, adj, nb, dst, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    dfs(pts, adj, src, dst, &mut vec![src], &mut best);
    best
}

fn path_len(pts: &[Vec2], path: &[usize]) -> f64 {
    path.windows(2)
        .map(|w| {
            let (a, b) = (pts[w[0]], pts[w[1]]);
            ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
        })
        .sum()
}

pub fn dijkstra_suite(cases: usize) -> SuiteResult {
    let mut r = rng(12);
    let mut unreachable = 0;
    for case in 0..cases {
        let n = r.gen_range(1..=6);
        let mut pts: Vec<Vec2> = Vec::new();
        while pts.len() < n {
            let p = Vec2::new(r.gen_range(0..100) as f64, r.gen_range(0..100) as f64);
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
        let mut g = WaterwayGraph::new();
        for (i, p) in pts.iter().enumerate() {
            g.add_node(i as i64 + 1, *p);
        }
        let mut adj = vec![Vec::new(); n];
        for a in 0..n {
            for b in a + 1..n {
                if r.gen_bool(0.45) {
                    g.add_edge(a as i64 + 1, b as i64 + 1).map_err(|e| e.to_string())?;
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        let (src, dst) = (r.gen_range(0..n), r.gen_range(0..n));
        let got = dijkstra(&g, src as i64 + 1, dst as i64 + 1);
        match (exhaustive_shortest(&pts, &adj, src, dst), got) {
            (None, Err(PlanError::Unreachable { .. })) => unreachable += 1,
            (Some((want, _)), Ok(path)) => {
                let idx: Vec<usize> = path.iter().map(|&id| id as usize - 1).collect();
                let valid = idx.first() == Some(&src)
                    && idx.last() == Some(&dst)
                    && idx.windows(2).all(|w| adj[w[0]].contains(&w[1]));
                if !valid {
                    return Err(format!("case {case}: {path:?} is not a path from {src} to {dst}"));
                }
                let c = path_len(&pts, &idx);
                if c != want {
                    return Err(format!("case {case}: cost {c} but optimum is {want}"));
                }
            }
            (want, got) => return Err(format!("case {case}: oracle {want:?}, dijkstra {got:?}")),
        }
    }
    Ok(format!("{cases} graphs ({unreachable} unreachable pairs), all optimal"))
}

// ---------------------------------------------------------------- swept collision

/// Obstacle lookup with cells centered on origin + (i, j)·cell_size;
/// anything outside the grid is an obstacle.
fn blocked(grid: &OccupancyGrid, p: Vec2) -> bool {
    let cs = grid.cell_size();
    let o = grid.origin();
    let i = ((p.x - o.x) / cs + 0.5).floor();
    let j = ((p.y - o.y) / cs + 0.5).floor();
    if i < 0.0 || j < 0.0 || i >= grid.width() as f64 || j >= grid.height() as f64 {
        return true;
    }
    grid.get(i as usize, j as usize) == OBSTACLE
}

/// Moves the inflated footprint along the segment in 0.1 m steps and tests
/// its outline (0.025 m spacing) and interior (0.1 m lattice) at each stop.
pub fn supersampled_sweep(grid: &OccupancyGrid, start: Pose, end: Vec2, fp: &Footprint) -> bool {
    let d = Vec2::new(end.x - start.position.x, end.y - start.position.y);
    let len = (d.x * d.x + d.y * d.y).sqrt();
    let heading = if len > 1e-9 { d.y.atan2(d.x) } else { start.heading };
    let (u, v) = (Vec2::new(heading.cos(), heading.sin()), Vec2::new(-heading.sin(), heading.cos()));
    let hl = fp.length / 2.0 + fp.safety_margin;
    let hw = fp.width / 2.0 + fp.safety_margin;
    let mut local = Vec::new();
    let steps = |extent: f64, h: f64| ((2.0 * extent) / h).ceil() as usize;
    let (nl, nw) = (steps(hl, 0.025), steps(hw, 0.025));
    for k in 0..=nl {
        let a = -hl + 2.0 * hl * k as f64 / nl as f64;
        local.push((a, -hw));
        local.push((a, hw));
    }
    for k in 0..=nw {
        let b = -hw + 2.0 * hw * k as f64 / nw as f64;
        local.push((-hl, b));
        local.push((hl, b));
    }
    let (il, iw) = (steps(hl, 0.1), steps(hw, 0.1));
    for a in 0..=il {
        for b in 0..=iw {
            local.push((-hl + 2.0 * hl * a as f64 / il as f64, -hw + 2.0 * hw * b as f64 / iw as f64));
        }
    }
    let stops = ((len / 0.1).ceil() as usize).max(1);
    (0..=stops).any(|s| {
        let t = len * s as f64 / stops as f64;
        let c = Vec2::new(start.position.x + u.x * t, start.position.y + u.y * t);
        local
            .iter()
            .any(|&(a, b)| blocked(grid, Vec2::new(c.x + u.x * a + v.x * b, c.y + u.y * a + v.y * b)))
    })
}

/// Largest separating-axis penetration of the swept rectangle into any
/// obstacle cell; negative when nothing overlaps.
pub fn overlap_depth(grid: &OccupancyGrid, start: Pose, end: Vec2, fp: &Footprint) -> f64 {
    let d = Vec2::new(end.x - start.position.x, end.y - start.position.y);
    let len = (d.x * d.x + d.y * d.y).sqrt();
    let heading = if len > 1e-9 { d.y.atan2(d.x) } else { start.heading };
    let (u, v) = (Vec2::new(heading.cos(), heading.sin()), Vec2::new(-heading.sin(), heading.cos()));
    let hl = len / 2.0 + fp.length / 2.0 + fp.safety_margin;
    let hw = fp.width / 2.0 + fp.safety_margin;
    let c = Vec2::new(start.position.x + u.x * len / 2.0, start.position.y + u.y * len / 2.0);
    let h = grid.cell_size() / 2.0;
    let mut best = f64::NEG_INFINITY;
    for j in 0..grid.height() {
        for i in 0..grid.width() {
            if grid.get(i, j) != OBSTACLE {
                continue;
            }
            let q = Vec2::new(grid.origin().x + i as f64 * 2.0 * h, grid.origin().y + j as f64 * 2.0 * h);
            let dd = Vec2::new(q.x - c.x, q.y - c.y);
            let axes = [
                (Vec2::new(1.0, 0.0), h + hl * u.x.abs() + hw * v.x.abs()),
                (Vec2::new(0.0, 1.0), h + hl * u.y.abs() + hw * v.y.abs()),
                (u, hl + h * (u.x.abs() + u.y.abs())),
                (v, hw + h * (v.x.abs() + v.y.abs())),
            ];
            let pen = axes
                .iter()
                .map(|(ax, r)| r - (dd.x * ax.x + dd.y * ax.y).abs())
                .fold(f64::INFINITY, f64::min);
            best = best.max(pen);
        }
    }
    best
}

pub fn swept_collision_suite(cases: usize) -> SuiteResult {
    let mut r = rng(13);
    let (mut hits, mut skipped) = (0, 0);
    for case in 0..cases {
        let cs = 3.125;
        let mut grid = OccupancyGrid::filled(28, 28, cs, Vec2::new(cs / 2.0, cs / 2.0), FREE).unwrap();
        let density = r.gen_range(0.005..0.04);
        for j in 0..28 {
            for i in 0..28 {
                if r.gen_bool(density) {
                    grid.set(i, j, OBSTACLE);
                }
            }
        }
        let fp = Footprint::new(r.gen_range(5.0..20.0), r.gen_range(2.0..6.0), r.gen_range(0.5..3.0));
        let start = Pose::new(r.gen_range(35.0..52.0), r.gen_range(35.0..52.0), r.gen_range(-3.14..3.14));
        let step = if r.gen_bool(0.1) { 0.0 } else { r.gen_range(0.0..15.0) };
        let dir = r.gen_range(-3.14f64..3.14);
        let end = Vec2::new(start.position.x + step * dir.cos(), start.position.y + step * dir.sin());
        let depth = overlap_depth(&grid, start, end, &fp);
        if depth > 0.0 && depth < 0.05 {
            skipped += 1;
            continue;
        }
        let got = grid.swept_collision(start, end, &fp);
        let want = supersampled_sweep(&grid, start, end, &fp);
        if got != want {
            return Err(format!("case {case}: swept_collision {got}, supersampled {want}, depth {depth:.3}"));
        }
        hits += usize::from(got);
    }
    Ok(format!(
        "{cases} cases ({hits} colliding, {skipped} shallow overlaps skipped), all agree"
    ))
}

// ---------------------------------------------------------------- jerk

/// Composite Simpson integral of the squared third derivative, computed from
/// the raw coefficients.
pub fn quadrature_jerk(c: &[f64; 6], t_end: f64, intervals: usize) -> f64 {
    let jerk = |t: f64| -> f64 {
        (3..6)
            .map(|i| {
                let falling = (i - 2..=i).map(|k| k as f64).product::<f64>();
                c[i] * falling * t.powi(i as i32 - 3)
            })
            .sum()
    };
    let h = t_end / intervals as f64;
    let mut s = jerk(0.0).powi(2) + jerk(t_end).powi(2);
    for k in 1..intervals {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * jerk(k as f64 * h).powi(2);
    }
    s * h / 3.0
}

pub fn jerk_suite(cases: usize) -> SuiteResult {
    let mut r = rng(14);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let start = [r.gen_range(-50.0..50.0), r.gen_range(-3.0..3.0), r.gen_range(-0.5..0.5)];
        let end = [r.gen_range(-50.0..50.0), r.gen_range(-3.0..3.0), r.gen_range(-0.5..0.5)];
        let t = r.gen_range(5.0..60.0);
        let p = Poly5::quintic(start, end, t);
        for (k, (a, b)) in start.iter().zip(end.iter()).enumerate() {
            if (p.deriv(k, 0.0) - a).abs() > 1e-9 || (p.deriv(k, t) - b).abs() > 1e-7 * (1.0 + b.abs()) {
                return Err(format!("case {case}: quintic misses boundary derivative {k}"));
            }
        }
        let got = jerk_cost(&p, t);
        let want = quadrature_jerk(&p.c, t, 2000);
        let rel = (got - want).abs() / want.abs().max(1e-300);
        worst = worst.max(rel);
        if rel > 1e-6 {
            return Err(format!("case {case}: closed form {got}, quadrature {want}"));
        }
    }
    Ok(format!("{cases} quintics, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- gradients

fn random_features(r: &mut ChaCha8Rng) -> Vec<f64> {
    let mut x = vec![r.gen_range(-1.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)];
    x.extend((3..FEATURE_DIM).map(|_| if r.gen_bool(0.15) { 1.0 } else { 0.0 }));
    x
}

/// |a − b| relative to the larger magnitude, with magnitudes below 1e-5
/// treated as 1e-5 so round-off on near-zero entries does not dominate.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Policy and value gradients of the PPO loss, and the log-density gradient,
/// against central differences.
pub fn gradient_suite(draws: usize) -> SuiteResult {
    let mut r = rng(15);
    let cfg = PpoConfig::default();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for draw in 0..draws {
        let mut params = MlpParams::random(&mut r);
        // larger output weights so the policy terms are not vanishingly small
        for v in params.actor.params_mut().iter_mut() {
            *v *= 3.0;
        }
        let n = 6;
        let mut transitions = Vec::new();
        for _ in 0..n {
            let features = random_features(&mut r);
            let out = params.actor.forward(&features);
            let raw_action = [r.gen_range(-1.5..1.5), r.gen_range(-1.5..1.5)];
            let logp = log_prob(&[out[0], out[1]], &[out[2], out[3]], &raw_action);
            transitions.push(Transition {
                features,
                raw_action,
                log_prob: logp + r.gen_range(-0.05..0.05),
                reward: 0.0,
                value: 0.0,
                done: false,
                terminal: false,
                next_value: None,
            });
        }
        let batch = RolloutBatch {
            transitions,
            returns: (0..n).map(|_| r.gen_range(-100.0..300.0)).collect(),
            advantages: (0..n).map(|_| r.gen_range(-2.0..2.0)).collect(),
        };
        let idx: Vec<usize> = (0..n).collect();
        let (_, g_actor, g_critic) = ppo_gradient(&params, &batch, &idx, &batch.advantages, &cfg);
        let loss = |p: &MlpParams| total_loss(&ppo_objective(p, &batch, &batch.advantages, &cfg), &cfg);
        let h = 1e-5;
        for critic in [false, true] {
            let count = if critic { params.critic.params().len() } else { params.actor.params().len() };
            for _ in 0..25 {
                let i = r.gen_range(0..count);
                let bump = |d: f64| {
                    let mut p = params.clone();
                    let net = if critic { &mut p.critic } else { &mut p.actor };
                    net.params_mut()[i] += d;
                    loss(&p)
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = if critic { g_critic[i] } else { g_actor[i] };
                let e = relative_error(an, fd);
                worst = worst.max(e);
                checked += 1;
                if e > 1e-4 {
                    let which = if critic { "critic" } else { "actor" };
                    return Err(format!("draw {draw}: {which}[{i}] analytic {an:e}, finite difference {fd:e}"));
                }
            }
        }
        // log-density with respect to the mean and log-std
        let mean: [f64; 2] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let ls: [f64; 2] = [r.gen_range(-1.5..0.5), r.gen_range(-1.5..0.5)];
        let u: [f64; 2] = [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)];
        for k in 0..2 {
            let var = (2.0 * ls[k]).exp();
            let d_mean = (u[k] - mean[k]) / var;
            let d_ls = (u[k] - mean[k]).powi(2) / var - 1.0;
            let mut mp = mean;
            let mut mm = mean;
            mp[k] += h;
            mm[k] -= h;
            let fd_mean = (log_prob(&mp, &ls, &u) - log_prob(&mm, &ls, &u)) / (2.0 * h);
            let mut lp = ls;
            let mut lm = ls;
            lp[k] += h;
            lm[k] -= h;
            let fd_ls = (log_prob(&mean, &lp, &u) - log_prob(&mean, &lm, &u)) / (2.0 * h);
            for (an, fd) in [(d_mean, fd_mean), (d_ls, fd_ls)] {
                let e = relative_error(an, fd);
                worst = worst.max(e);
                checked += 1;
                if e > 1e-4 {
                    return Err(format!("draw {draw}: log-density gradient {an:e} vs {fd:e}"));
                }
            }
        }
    }
    Ok(format!("{draws} draws, {checked} coordinates, max relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- clearance

/// Distance to the nearest obstacle cell center by scanning every cell,
/// including the ring of virtual obstacle cells just outside the grid.
pub fn exhaustive_nearest(grid: &OccupancyGrid, p: Vec2) -> f64 {
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let cs = grid.cell_size();
    let o = grid.origin();
    let mut best = f64::INFINITY;
    for j in -1..=h {
        for i in -1..=w {
            let outside = i < 0 || j < 0 || i >= w || j >= h;
            if outside || grid.get(i as usize, j as usize) == OBSTACLE {
                let c = Vec2::new(o.x + i as f64 * cs, o.y + j as f64 * cs);
                best = best.min((c.x - p.x).hypot(c.y - p.y));
            }
        }
    }
    best
}

pub fn nearest_distance_suite(cases: usize) -> SuiteResult {
    let mut r = rng(16);
    for case in 0..cases {
        let (w, h) = (r.gen_range(5..40), r.gen_range(5..40));
        let mut grid = OccupancyGrid::filled(w, h, 3.125, Vec2::ZERO, FREE).unwrap();
        for _ in 0..r.gen_range(0..6) {
            grid.set(r.gen_range(0..w), r.gen_range(0..h), OBSTACLE);
        }
        let (lo, hi) = grid.extent();
        let p = Vec2::new(r.gen_range(lo.x..hi.x), r.gen_range(lo.y..hi.y));
        let got = grid.nearest_obstacle_distance(p).map_err(|e| e.to_string())?;
        let want = exhaustive_nearest(&grid, p);
        if got != want {
            return Err(format!("case {case}: {got} vs {want}"));
        }
    }
    Ok(format!("{cases} grids, exact agreement"))
}
