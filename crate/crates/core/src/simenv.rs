//! Episodic environment over the vessel dynamics and the occupancy grid.
//!
//! Actions are a desired speed and a heading change relative to the current
//! heading; the reward is the sum of a normalized distance term, a goal bonus,
//! a collision penalty and a heading-action penalty.

use crate::dynamics::{step_dynamics, Controllers, Setpoint, ShipParams, ShipState};
use crate::geom::{wrap_angle, Pose, Vec2};
use crate::gridmap::{Cell, Footprint, OccupancyGrid};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Side length of the local map window, in cells.
pub const PATCH_SIZE: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("start pose ({x:.1}, {y:.1}) collides with an obstacle")]
    StartInCollision { x: f64, y: f64 },
    #[error("step called on a finished episode")]
    EpisodeFinished,
    #[error("invalid environment config: {0}")]
    InvalidConfig(&'static str),
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Distance normalizer for the distance reward.
    pub d_max: f64,
    /// Goal radius D_G, m.
    pub goal_radius: f64,
    pub r_goal_reached: f64,
    pub r_collision: f64,
    pub w_h: f64,
    pub gamma: f64,
    /// Dynamics steps per environment step.
    pub substeps: usize,
    pub max_steps: usize,
    /// Bound on the heading-change action, rad.
    pub a_max: f64,
    /// Whether entering the goal radius of a final target ends the episode.
    #[serde(default = "default_true")]
    pub goal_terminates: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            d_max: 450.0,
            goal_radius: 25.0,
            r_goal_reached: 10.0,
            r_collision: -20.0,
            w_h: 1.0,
            gamma: 0.99,
            substeps: 10,
            max_steps: 200,
            a_max: 0.3,
            goal_terminates: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.d_max > 0.0) {
            return Err(EnvError::InvalidConfig("d_max must be positive"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(EnvError::InvalidConfig("goal_radius must be positive"));
        }
        if !(self.w_h >= 0.0) {
            return Err(EnvError::InvalidConfig("w_h must be nonnegative"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EnvError::InvalidConfig("gamma must lie in (0, 1)"));
        }
        if self.substeps == 0 {
            return Err(EnvError::InvalidConfig("substeps must be at least 1"));
        }
        if !(self.a_max > 0.0) {
            return Err(EnvError::InvalidConfig("a_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Bearing to the target minus ship heading, wrapped to (−π, π].
    pub rel_heading: f64,
    /// Distance to the target, m.
    pub distance: f64,
    pub speed: f64,
    /// `PATCH_SIZE²` cells, row-major, row 0 at the lowest world y. 1 = free.
    pub patch: Vec<u8>,
}

impl Observation {
    pub fn patch_at(&self, row: usize, col: usize) -> u8 {
        self.patch[row * PATCH_SIZE + col]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvAction {
    pub desired_speed: f64,
    /// Heading change relative to the current heading, rad.
    pub heading_change: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub distance: f64,
    pub goal: f64,
    pub collision: f64,
    pub heading: f64,
    pub total: f64,
}

/// Reward for being `d` meters from the target after an action with heading
/// change `a_h`.
pub fn reward(d: f64, collision: bool, goal: bool, a_h: f64, cfg: &EnvConfig) -> RewardBreakdown {
    let distance = 1.0 - d / cfg.d_max;
    let goal = if goal { cfg.r_goal_reached } else { 0.0 };
    let collision = if collision { cfg.r_collision } else { 0.0 };
    let heading = -cfg.w_h * a_h.abs();
    RewardBreakdown {
        distance,
        goal,
        collision,
        heading,
        total: distance + goal + collision + heading,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collision: bool,
    /// Ship within the goal radius of the current target.
    pub goal_reached: bool,
    pub position: Vec2,
    /// Whether the requested action had to be clamped into bounds.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
}

/// Complete mutable state of an environment. Restoring a snapshot reproduces
/// the identical future for identical actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub ship: ShipState,
    pub controllers: Controllers,
    pub target: Vec2,
    /// Whether reaching `target` ends the episode.
    pub target_is_final: bool,
    pub steps: usize,
    pub done: bool,
}

impl EnvSnapshot {
    /// Copy used for lookahead simulation: the step counter restarts and
    /// arriving at the target does not end the rollout.
    pub fn for_planning(&self) -> EnvSnapshot {
        EnvSnapshot {
            target_is_final: false,
            steps: 0,
            done: false,
            ..*self
        }
    }

    pub fn pose(&self) -> Pose {
        Pose {
            position: self.ship.position,
            heading: self.ship.heading,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShipEnv {
    grid: Arc<OccupancyGrid>,
    params: Arc<ShipParams>,
    footprint: Footprint,
    cfg: EnvConfig,
    state: EnvSnapshot,
}

impl ShipEnv {
    pub fn new(
        grid: Arc<OccupancyGrid>,
        params: Arc<ShipParams>,
        footprint: Footprint,
        cfg: EnvConfig,
    ) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(Self {
            grid,
            params,
            footprint,
            cfg,
            state: EnvSnapshot {
                ship: ShipState::default(),
                controllers: Controllers::default(),
                target: Vec2::ZERO,
                target_is_final: true,
                steps: 0,
                done: true,
            },
        })
    }

    pub fn grid(&self) -> &Arc<OccupancyGrid> {
        &self.grid
    }

    pub fn params(&self) -> &Arc<ShipParams> {
        &self.params
    }

    pub fn footprint(&self) -> &Footprint {
        &self.footprint
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn ship(&self) -> &ShipState {
        &self.state.ship
    }

    pub fn pose(&self) -> Pose {
        self.state.pose()
    }

    pub fn target(&self) -> Vec2 {
        self.state.target
    }

    pub fn steps(&self) -> usize {
        self.state.steps
    }

    pub fn is_done(&self) -> bool {
        self.state.done
    }

    /// Places the ship at `start` at rest with fresh controllers.
    pub fn reset(&mut self, start: Pose, target: Vec2) -> Result<Observation, EnvError> {
        if self.grid.footprint_collision(start, &self.footprint) {
            return Err(EnvError::StartInCollision {
                x: start.position.x,
                y: start.position.y,
            });
        }
        self.state = EnvSnapshot {
            ship: ShipState::at_rest(start.position, start.heading),
            controllers: Controllers::default(),
            target,
            target_is_final: true,
            steps: 0,
            done: false,
        };
        Ok(self.observe())
    }

    /// Changes the target mid-episode. When `is_final` is false, arriving at it
    /// earns the goal bonus but does not end the episode.
    pub fn set_target(&mut self, target: Vec2, is_final: bool) {
        self.state.target = target;
        self.state.target_is_final = is_final;
    }

    pub fn snapshot(&self) -> EnvSnapshot {
        self.state
    }

    pub fn restore(&mut self, snap: &EnvSnapshot) {
        self.state = *snap;
    }

    pub fn observe(&self) -> Observation {
        let ship = &self.state.ship;
        let to_target = self.state.target - ship.position;
        let rel_heading = if to_target.norm() > 0.0 {
            wrap_angle(to_target.angle() - ship.heading)
        } else {
            0.0
        };
        Observation {
            rel_heading,
            distance: to_target.norm(),
            speed: ship.speed,
            patch: self.local_patch(ship.position),
        }
    }

    fn local_patch(&self, center: Vec2) -> Vec<u8> {
        let c0 = self.grid.cell_of(center);
        let half = (PATCH_SIZE / 2) as i64;
        let mut patch = vec![0u8; PATCH_SIZE * PATCH_SIZE];
        for r in 0..PATCH_SIZE {
            for c in 0..PATCH_SIZE {
                let cell = Cell {
                    i: c0.i - half + c as i64,
                    j: c0.j - half + r as i64,
                };
                patch[r * PATCH_SIZE + c] = self.grid.is_free(cell) as u8;
            }
        }
        patch
    }

    /// Clamps an action into `[0, v_max] × [−a_max, a_max]`.
    pub fn clamp_action(&self, action: EnvAction) -> (EnvAction, bool) {
        let desired_speed = action.desired_speed.clamp(0.0, self.params.v_max);
        let heading_change = action.heading_change.clamp(-self.cfg.a_max, self.cfg.a_max);
        let clamped =
            desired_speed != action.desired_speed || heading_change != action.heading_change;
        (
            EnvAction {
                desired_speed,
                heading_change,
            },
            clamped,
        )
    }

    pub fn step(&mut self, action: EnvAction) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let (action, clamped) = self.clamp_action(action);
        let start = self.pose();
        let sp = Setpoint {
            desired_speed: action.desired_speed,
            desired_heading: wrap_angle(start.heading + action.heading_change),
        };
        let (mut ship, mut ctrl) = (self.state.ship, self.state.controllers);
        for _ in 0..self.cfg.substeps {
            (ship, ctrl) = step_dynamics(&ship, &ctrl, &sp, &self.params);
        }
        Ok(self.finish_step(start, ship, ctrl, action.heading_change, clamped))
    }

    /// Like [`ShipEnv::step`] but asks `guide` for a fresh setpoint before
    /// every dynamics substep, as a guidance loop running at the controller
    /// rate would. Each setpoint is clamped to the action bounds around the
    /// heading at the start of the env step; the heading term of the reward
    /// uses the last setpoint.
    pub fn step_guided(&mut self, mut guide: impl FnMut(&ShipState) -> Setpoint) -> Result<StepResult, EnvError> {
        if self.state.done {
            return Err(EnvError::EpisodeFinished);
        }
        let start = self.pose();
        let (mut ship, mut ctrl) = (self.state.ship, self.state.controllers);
        let mut clamped = false;
        let mut change = 0.0;
        for _ in 0..self.cfg.substeps {
            let sp = guide(&ship);
            let (a, c) = self.clamp_action(EnvAction {
                desired_speed: sp.desired_speed,
                heading_change: wrap_angle(sp.desired_heading - start.heading),
            });
            clamped |= c;
            change = a.heading_change;
            let sp = Setpoint {
                desired_speed: a.desired_speed,
                desired_heading: wrap_angle(start.heading + a.heading_change),
            };
            (ship, ctrl) = step_dynamics(&ship, &ctrl, &sp, &self.params);
        }
        Ok(self.finish_step(start, ship, ctrl, change, clamped))
    }

    fn finish_step(&mut self, start: Pose, ship: ShipState, ctrl: Controllers, heading_change: f64, clamped: bool) -> StepResult {
        self.state.ship = ship;
        self.state.controllers = ctrl;
        self.state.steps += 1;

        let collision = self
            .grid
            .swept_collision(start, ship.position, &self.footprint);
        let d = ship.position.distance(self.state.target);
        let goal_reached = d < self.cfg.goal_radius;
        let breakdown = reward(d, collision, goal_reached, heading_change, &self.cfg);
        let done = collision
            || (goal_reached && self.state.target_is_final && self.cfg.goal_terminates)
            || self.state.steps >= self.cfg.max_steps;
        self.state.done = done;
        StepResult {
            obs: self.observe(),
            reward: breakdown.total,
            breakdown,
            done,
            info: StepInfo {
                collision,
                goal_reached,
                position: ship.position,
                clamped,
            },
        }
    }
}
