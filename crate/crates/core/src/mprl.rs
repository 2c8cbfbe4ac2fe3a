//! Model-predictive reinforcement learning: enumerate heading-change
//! sequences, simulate each from the current environment snapshot, score
//! with n-step bootstrapped returns and follow the best one.

use crate::agent::ValueFunction;
use crate::geom::{Pose, Vec2};
use crate::simenv::{EnvAction, EnvSnapshot, Observation, ShipEnv};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MprlError {
    #[error("invalid MPRL config: {0}")]
    InvalidConfig(&'static str),
    #[error("no candidates to select from")]
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MprlConfig {
    /// Number of initial heading changes, evenly spaced over [−a_max, a_max].
    pub j: usize,
    /// Number of per-step heading-change increments, evenly spaced over
    /// [−delta_max, delta_max].
    pub l: usize,
    /// Simulated env steps per candidate.
    pub n: usize,
    pub gamma: f64,
    pub cruise_speed: f64,
    /// Env steps between emitted waypoints.
    pub waypoint_stride: usize,
    /// Increment bound; `a_max / n` when absent.
    pub delta_max: Option<f64>,
    /// Evaluate candidates on the rayon pool.
    pub parallel: bool,
}

impl Default for MprlConfig {
    fn default() -> Self {
        Self {
            j: 7,
            l: 5,
            n: 8,
            gamma: 0.99,
            cruise_speed: 2.0,
            waypoint_stride: 2,
            delta_max: None,
            parallel: true,
        }
    }
}

impl MprlConfig {
    pub fn validate(&self, v_max: f64) -> Result<(), MprlError> {
        if self.j == 0 || self.l == 0 || self.n == 0 {
            return Err(MprlError::InvalidConfig("j, l and n must be at least 1"));
        }
        if !(self.cruise_speed > 0.0 && self.cruise_speed <= v_max) {
            return Err(MprlError::InvalidConfig("cruise_speed must lie in (0, v_max]"));
        }
        if self.waypoint_stride == 0 || self.n % self.waypoint_stride != 0 {
            return Err(MprlError::InvalidConfig("waypoint_stride must divide n"));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(MprlError::InvalidConfig("gamma must lie in [0, 1)"));
        }
        if matches!(self.delta_max, Some(d) if !(d >= 0.0)) {
            return Err(MprlError::InvalidConfig("delta_max must be nonnegative"));
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        self.j * self.l
    }
}

/// `count` evenly spaced values over [−bound, bound]; a single value is 0.
pub fn symmetric_grid(count: usize, bound: f64) -> Vec<f64> {
    if count == 1 {
        return vec![0.0];
    }
    (0..count)
        .map(|i| -bound + 2.0 * bound * i as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub index: usize,
    pub a0: f64,
    pub delta: f64,
    pub actions: Vec<f64>,
}

/// Unfolds a_{t+1} = clamp(a_t + Δa, −a_max, a_max) from a₀ for n steps.
pub fn unfold(a0: f64, delta: f64, n: usize, a_max: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut a = a0.clamp(-a_max, a_max);
    for _ in 0..n {
        out.push(a);
        a = (a + delta).clamp(-a_max, a_max);
    }
    out
}

/// All j·l sequences, initial value in the outer loop and increment inner.
pub fn generate_action_sequences(cfg: &MprlConfig, a_max: f64) -> Vec<ActionSequence> {
    let delta_max = cfg.delta_max.unwrap_or(a_max / cfg.n as f64);
    let mut out = Vec::with_capacity(cfg.candidate_count());
    for &a0 in &symmetric_grid(cfg.j, a_max) {
        for &delta in &symmetric_grid(cfg.l, delta_max) {
            out.push(ActionSequence {
                index: out.len(),
                a0,
                delta,
                actions: unfold(a0, delta, cfg.n, a_max),
            });
        }
    }
    out
}

/// Discounted sum of `rewards` plus, unless the rollout ended terminally,
/// γᵐ times the value of the state reached after the last reward.
pub fn n_step_return(rewards: &[f64], terminal: bool, bootstrap: f64, gamma: f64) -> f64 {
    let mut g = 0.0;
    let mut gk = 1.0;
    for r in rewards {
        g += gk * r;
        gk *= gamma;
    }
    if terminal {
        g
    } else {
        g + gk * bootstrap
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTrajectory {
    pub index: usize,
    pub actions: Vec<f64>,
    /// Start pose followed by the pose after every realized step.
    pub poses: Vec<Pose>,
    pub rewards: Vec<f64>,
    /// Per-step collision flags.
    pub collisions: Vec<bool>,
    pub terminal_obs: Observation,
    /// The rollout ended early (collision).
    pub terminated: bool,
    pub g_return: f64,
    pub first_step_collision: bool,
}

impl CandidateTrajectory {
    /// Steps realized before the first collision.
    pub fn safe_steps(&self) -> usize {
        self.collisions
            .iter()
            .position(|&c| c)
            .unwrap_or(self.collisions.len())
    }
}

/// Simulates one sequence from `snapshot` at the cruise speed. `env` is only
/// used as scratch space and is left in the rollout's final state.
pub fn rollout_candidate(
    env: &mut ShipEnv,
    snapshot: &EnvSnapshot,
    seq: &ActionSequence,
    cfg: &MprlConfig,
    value_fn: &dyn ValueFunction,
) -> CandidateTrajectory {
    env.restore(&snapshot.for_planning());
    let mut poses = vec![env.pose()];
    let mut rewards = Vec::with_capacity(seq.actions.len());
    let mut collisions = Vec::with_capacity(seq.actions.len());
    let mut terminated = false;
    for &a in &seq.actions {
        let res = env
            .step(EnvAction {
                desired_speed: cfg.cruise_speed,
                heading_change: a,
            })
            .expect("planning rollouts restart from an active snapshot");
        poses.push(env.pose());
        rewards.push(res.reward);
        collisions.push(res.info.collision);
        if res.done {
            terminated = true;
            break;
        }
    }
    let terminal_obs = env.observe();
    let bootstrap = if terminated {
        0.0
    } else {
        value_fn.value(&terminal_obs)
    };
    CandidateTrajectory {
        index: seq.index,
        actions: seq.actions.clone(),
        g_return: n_step_return(&rewards, terminated, bootstrap, cfg.gamma),
        first_step_collision: collisions.first().copied().unwrap_or(false),
        poses,
        rewards,
        collisions,
        terminal_obs,
        terminated,
    }
}

/// Candidate with the largest return; the smallest index wins ties and NaN
/// returns never win.
pub fn select_trajectory(cands: &[CandidateTrajectory]) -> Result<&CandidateTrajectory, MprlError> {
    let mut best: Option<&CandidateTrajectory> = None;
    for c in cands {
        let better = match best {
            None => true,
            Some(b) => c.g_return > b.g_return || (b.g_return.is_nan() && !c.g_return.is_nan()),
        };
        if better {
            best = Some(c);
        }
    }
    best.ok_or(MprlError::NoCandidates)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Waypoints {
        waypoints: Vec<Vec2>,
        chosen: usize,
        returns: Vec<f64>,
    },
    Handover {
        reason: String,
        chosen: usize,
        start: Pose,
        /// The selected candidate's first waypoint, if it got that far.
        first_waypoint: Option<Vec2>,
        first_step_collision: bool,
        returns: Vec<f64>,
    },
}

/// Evaluates every candidate, in parallel when configured. Results are in
/// generation order either way.
pub fn evaluate_candidates(
    env: &ShipEnv,
    snapshot: &EnvSnapshot,
    cfg: &MprlConfig,
    value_fn: &dyn ValueFunction,
) -> Vec<CandidateTrajectory> {
    let seqs = generate_action_sequences(cfg, env.config().a_max);
    if cfg.parallel {
        seqs.par_iter()
            .map_init(|| env.clone(), |e, s| rollout_candidate(e, snapshot, s, cfg, value_fn))
            .collect()
    } else {
        let mut e = env.clone();
        seqs.iter()
            .map(|s| rollout_candidate(&mut e, snapshot, s, cfg, value_fn))
            .collect()
    }
}

/// One MPRL planning cycle from `snapshot`.
pub fn plan(
    env: &ShipEnv,
    snapshot: &EnvSnapshot,
    cfg: &MprlConfig,
    value_fn: &dyn ValueFunction,
) -> Result<PlanOutcome, MprlError> {
    cfg.validate(env.params().v_max)?;
    let cands = evaluate_candidates(env, snapshot, cfg, value_fn);
    let returns: Vec<f64> = cands.iter().map(|c| c.g_return).collect();
    let best = select_trajectory(&cands)?;
    let start = snapshot.pose();
    let stride = cfg.waypoint_stride;
    let safe = best.safe_steps();
    let waypoints: Vec<Vec2> = (1..=cfg.n / stride)
        .map(|k| k * stride)
        .take_while(|&t| t <= safe)
        .map(|t| best.poses[t].position)
        .collect();
    let first = waypoints.first().copied();
    let first_ok = first.is_some_and(|wp| {
        !env.grid().swept_collision(start, wp, env.footprint())
    });
    if !first_ok {
        let reason = if first.is_none() {
            "selected trajectory collides before its first waypoint"
        } else {
            "transition to the first waypoint collides"
        };
        return Ok(PlanOutcome::Handover {
            reason: reason.to_string(),
            chosen: best.index,
            start,
            first_waypoint: first.or_else(|| best.poses.get(stride).map(|p| p.position)),
            first_step_collision: best.first_step_collision,
            returns,
        });
    }
    Ok(PlanOutcome::Waypoints {
        waypoints,
        chosen: best.index,
        returns,
    })
}
