//! Episode loop: global waypoints feed the env target, a local planner emits
//! waypoints, and line-of-sight guidance follows them.

use super::scenario::LoadedScenario;
use super::HarnessError;
use crate::agent::{ppo_plan_waypoints, MlpParams, PpoPlan, ValueFunction};
use crate::dynamics::{Setpoint, ShipState};
use crate::frenetplan::{fit_reference, plan_frenet, FrenetConfig, FrenetOutcome, ReferencePath};
use crate::geom::Vec2;
use crate::mprl::{self, MprlConfig, PlanOutcome};
use crate::simenv::ShipEnv;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;

/// Line-of-sight setpoint toward the active waypoint. Waypoints inside
/// `accept_radius` are skipped; once all are consumed the ship holds its
/// heading at zero speed.
pub fn los_setpoint(
    state: &ShipState,
    waypoints: &[Vec2],
    active_index: usize,
    accept_radius: f64,
    cruise_speed: f64,
) -> Result<(Setpoint, usize), HarnessError> {
    if waypoints.is_empty() {
        return Err(HarnessError::NoWaypoints);
    }
    let mut i = active_index.min(waypoints.len());
    while i < waypoints.len() && state.position.distance(waypoints[i]) < accept_radius {
        i += 1;
    }
    if i == waypoints.len() {
        return Ok((
            Setpoint {
                desired_speed: 0.0,
                desired_heading: state.heading,
            },
            i,
        ));
    }
    Ok((
        Setpoint {
            desired_speed: cruise_speed,
            desired_heading: state.position.bearing_to(waypoints[i]),
        },
        i,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlannerOutput {
    Waypoints(Vec<Vec2>),
    Handover(String),
}

pub trait Planner {
    fn name(&self) -> &str;
    /// Env steps between planning cycles.
    fn replan_interval(&self) -> usize;
    fn plan(&mut self, env: &ShipEnv) -> PlannerOutput;
}

pub struct MprlPlanner {
    pub cfg: MprlConfig,
    pub value: Box<dyn ValueFunction>,
    /// Rollouts run here instead of in the episode env when the value
    /// function expects a different reward config.
    pub sim: Option<ShipEnv>,
}

impl Planner for MprlPlanner {
    fn name(&self) -> &str {
        "mprl"
    }

    fn replan_interval(&self) -> usize {
        self.cfg.waypoint_stride
    }

    fn plan(&mut self, env: &ShipEnv) -> PlannerOutput {
        let scratch = self.sim.as_ref().unwrap_or(env);
        match mprl::plan(scratch, &env.snapshot(), &self.cfg, self.value.as_ref()) {
            Ok(PlanOutcome::Waypoints { waypoints, .. }) => PlannerOutput::Waypoints(waypoints),
            Ok(PlanOutcome::Handover { reason, .. }) => PlannerOutput::Handover(reason),
            Err(e) => PlannerOutput::Handover(e.to_string()),
        }
    }
}

pub struct PpoPlanner {
    pub params: MlpParams,
    pub num_waypoints: usize,
    pub stride: usize,
    /// Simulation copy whose config carries the training-time feature scaling.
    pub sim: ShipEnv,
}

impl Planner for PpoPlanner {
    fn name(&self) -> &str {
        "ppo"
    }

    fn replan_interval(&self) -> usize {
        self.stride
    }

    fn plan(&mut self, env: &ShipEnv) -> PlannerOutput {
        match ppo_plan_waypoints(&self.params, &mut self.sim, &env.snapshot(), self.num_waypoints, self.stride) {
            Ok(PpoPlan::Waypoints(w)) if !w.is_empty() => PlannerOutput::Waypoints(w),
            Ok(PpoPlan::Waypoints(_)) => PlannerOutput::Handover("policy produced no waypoints".into()),
            Ok(PpoPlan::Failure { position }) => PlannerOutput::Handover(format!(
                "policy rollout collides at ({:.1}, {:.1})",
                position.x, position.y
            )),
            Err(e) => PlannerOutput::Handover(e.to_string()),
        }
    }
}

pub struct FrenetPlanner {
    pub reference: ReferencePath,
    pub cfg: FrenetConfig,
    pub interval: usize,
}

impl FrenetPlanner {
    /// Re-plans every `replan_seconds` of simulated time, rounded up to
    /// whole env steps.
    pub fn new(route: &[Vec2], cfg: FrenetConfig, env_step_seconds: f64, replan_seconds: f64) -> Result<Self, HarnessError> {
        Ok(Self {
            reference: fit_reference(route)?,
            cfg,
            interval: ((replan_seconds / env_step_seconds).ceil() as usize).max(1),
        })
    }
}

impl Planner for FrenetPlanner {
    fn name(&self) -> &str {
        "frenet"
    }

    fn replan_interval(&self) -> usize {
        self.interval
    }

    fn plan(&mut self, env: &ShipEnv) -> PlannerOutput {
        let ship = env.ship();
        match plan_frenet(
            env.pose(),
            ship.speed,
            &self.reference,
            env.grid(),
            env.footprint(),
            &self.cfg,
        ) {
            FrenetOutcome::Waypoints { waypoints, .. } if !waypoints.is_empty() => PlannerOutput::Waypoints(waypoints),
            FrenetOutcome::Waypoints { .. } => PlannerOutput::Handover("empty trajectory".into()),
            FrenetOutcome::Failure { reason } => PlannerOutput::Handover(reason),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub step: usize,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

impl PoseSample {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Plan,
    WaypointAdvance,
    GlobalAdvance,
    Handover,
    Collision,
    Goal,
    StepCap,
}

impl EventKind {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Handover | Self::Collision | Self::Goal | Self::StepCap)
    }

    pub fn status(self) -> &'static str {
        match self {
            Self::Goal => "goal",
            Self::Collision => "collision",
            Self::Handover => "handover",
            Self::StepCap => "step_cap",
            _ => "running",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub step: usize,
    pub t: f64,
    pub kind: EventKind,
    pub x: f64,
    pub y: f64,
    /// Waypoint the event refers to, if any.
    pub wx: Option<f64>,
    pub wy: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointRow {
    pub batch: usize,
    pub step: usize,
    pub t: f64,
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub scenario: String,
    pub planner: String,
    pub seed: u64,
    pub start: Vec2,
    pub goal: Vec2,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub info: RunInfo,
    pub poses: Vec<PoseSample>,
    pub waypoints: Vec<WaypointRow>,
    pub events: Vec<Event>,
}

impl RunLog {
    pub fn terminal(&self) -> Option<&Event> {
        self.events.iter().find(|e| e.kind.is_terminal())
    }

    pub fn status(&self) -> &'static str {
        self.terminal().map_or("running", |e| e.kind.status())
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Everything except wall-clock runtime.
    pub fn same_run(&self, other: &RunLog) -> bool {
        self.poses == other.poses
            && self.waypoints == other.waypoints
            && self.events == other.events
            && self.info.scenario == other.info.scenario
            && self.info.planner == other.info.planner
            && self.info.seed == other.info.seed
            && self.info.start == other.info.start
            && self.info.goal == other.info.goal
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        write_csv(&dir.join("poses.csv"), &self.poses)?;
        write_csv(&dir.join("waypoints.csv"), &self.waypoints)?;
        write_csv(&dir.join("events.csv"), &self.events)?;
        std::fs::write(dir.join("run.json"), serde_json::to_string_pretty(&self.info)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self, HarnessError> {
        let info_path = dir.join("run.json");
        let info = std::fs::read_to_string(&info_path).map_err(|_| HarnessError::MissingFile(info_path))?;
        Ok(Self {
            info: serde_json::from_str(&info)?,
            poses: read_csv(&dir.join("poses.csv"))?,
            waypoints: read_csv(&dir.join("waypoints.csv"))?,
            events: read_csv(&dir.join("events.csv"))?,
        })
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

struct Recorder {
    log: RunLog,
    step_seconds: f64,
}

impl Recorder {
    fn now(&self, step: usize) -> f64 {
        step as f64 * self.step_seconds
    }

    fn pose(&mut self, env: &ShipEnv) {
        let s = env.ship();
        let step = env.steps();
        self.log.poses.push(PoseSample {
            step,
            t: self.now(step),
            x: s.position.x,
            y: s.position.y,
            heading: s.heading,
            speed: s.speed,
        });
    }

    fn event(&mut self, env: &ShipEnv, kind: EventKind, at: Option<Vec2>, detail: impl Into<String>) {
        self.event_from(env, env.ship().position, kind, at, detail);
    }

    /// Event logged at `p` rather than the current ship position.
    fn event_from(&mut self, env: &ShipEnv, p: Vec2, kind: EventKind, at: Option<Vec2>, detail: impl Into<String>) {
        let step = env.steps();
        self.log.events.push(Event {
            step,
            t: self.now(step),
            kind,
            x: p.x,
            y: p.y,
            wx: at.map(|v| v.x),
            wy: at.map(|v| v.y),
            detail: detail.into(),
        });
    }

    fn batch(&mut self, env: &ShipEnv, waypoints: &[Vec2]) {
        let batch = self.log.waypoints.last().map_or(0, |r| r.batch + 1);
        let step = env.steps();
        for (index, w) in waypoints.iter().enumerate() {
            self.log.waypoints.push(WaypointRow {
                batch,
                step,
                t: self.now(step),
                index,
                x: w.x,
                y: w.y,
            });
        }
    }
}

/// A global waypoint counts as reached inside `radius` or once the ship is
/// past the line through it perpendicular to the next route leg.
pub fn global_reached(pos: Vec2, route: &[Vec2], active: usize, radius: f64) -> bool {
    if pos.distance(route[active]) < radius {
        return true;
    }
    match route.get(active + 1) {
        Some(&next) => (pos - route[active]).dot(next - route[active]) > 0.0,
        None => false,
    }
}

/// Runs one episode of `planner` on `sc`.
pub fn run_episode(sc: &LoadedScenario, planner: &mut dyn Planner) -> Result<RunLog, HarnessError> {
    let t0 = Instant::now();
    let s = &sc.scenario;
    let mut env = ShipEnv::new(sc.grid.clone(), sc.params.clone(), s.footprint, s.env.clone())?;
    let route = &sc.route;
    let last = route.len() - 1;
    let mut active = last.min(1);
    env.reset(s.start, route[active])?;
    env.set_target(route[active], active == last);
    let goal_radius = s.env.goal_radius;
    let mut rec = Recorder {
        log: RunLog {
            info: RunInfo {
                scenario: s.name.clone(),
                planner: planner.name().to_string(),
                seed: s.seed,
                start: s.start.position,
                goal: s.goal,
                runtime_s: 0.0,
            },
            poses: Vec::new(),
            waypoints: Vec::new(),
            events: Vec::new(),
        },
        step_seconds: sc.params.dt * s.env.substeps as f64,
    };
    rec.pose(&env);
    let mut local: Vec<Vec2> = Vec::new();
    let mut li = 0usize;
    let mut since_plan = 0usize;
    loop {
        let pos = env.ship().position;
        if active == last && pos.distance(route[last]) < goal_radius {
            rec.event(&env, EventKind::Goal, Some(route[last]), "final goal reached");
            break;
        }
        while active < last && global_reached(env.ship().position, route, active, goal_radius) {
            rec.event(&env, EventKind::GlobalAdvance, Some(route[active]), format!("global waypoint {active}"));
            active += 1;
            env.set_target(route[active], active == last);
        }
        if active == last && pos.distance(route[last]) < goal_radius {
            continue;
        }
        if local.is_empty() || li >= local.len() || since_plan >= planner.replan_interval() {
            match planner.plan(&env) {
                PlannerOutput::Waypoints(w) => {
                    rec.event(&env, EventKind::Plan, None, format!("{} waypoints", w.len()));
                    rec.batch(&env, &w);
                    local = w;
                    li = 0;
                    since_plan = 0;
                }
                PlannerOutput::Handover(reason) => {
                    rec.event(&env, EventKind::Handover, None, reason);
                    break;
                }
            }
        }
        let mut advanced: Vec<(usize, Vec2)> = Vec::new();
        let mut err = None;
        let mut held: Option<Setpoint> = None;
        // past the last waypoint the ship keeps its final setpoint until the
        // next planning cycle
        let res = env.step_guided(|ship| {
            if li >= local.len() {
                if let Some(sp) = held {
                    return sp;
                }
            }
            match los_setpoint(ship, &local, li, s.accept_radius, s.cruise_speed) {
                Ok((sp, next)) => {
                    advanced.extend((li..next).map(|k| (k, ship.position)));
                    li = next;
                    if next < local.len() || held.is_none() {
                        held = Some(sp);
                    }
                    held.unwrap_or(sp)
                }
                Err(e) => {
                    err = Some(e);
                    Setpoint {
                        desired_speed: 0.0,
                        desired_heading: ship.heading,
                    }
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e);
        }
        for (k, p) in advanced {
            rec.event_from(&env, p, EventKind::WaypointAdvance, Some(local[k]), format!("local waypoint {k}"));
        }
        since_plan += 1;
        rec.pose(&env);
        if res.info.collision {
            rec.event(&env, EventKind::Collision, None, "swept footprint hit an obstacle");
            break;
        }
        let at_goal = active == last && res.info.position.distance(route[last]) < goal_radius;
        if res.done && !at_goal {
            rec.event(&env, EventKind::StepCap, None, format!("step cap {}", s.env.max_steps));
            break;
        }
    }
    rec.log.info.runtime_s = t0.elapsed().as_secs_f64();
    Ok(rec.log)
}


/// Log with one pose per point and no events, for metric and plot tests.
#[cfg(test)]
pub(crate) fn synthetic_log(planner: &str, points: &[Vec2]) -> RunLog {
    RunLog {
        info: RunInfo {
            scenario: "synthetic".into(),
            planner: planner.into(),
            seed: 0,
            start: points.first().copied().unwrap_or(Vec2::ZERO),
            goal: points.last().copied().unwrap_or(Vec2::ZERO),
            runtime_s: 0.0,
        },
        poses: points
            .iter()
            .enumerate()
            .map(|(step, p)| PoseSample {
                step,
                t: step as f64 * 5.0,
                x: p.x,
                y: p.y,
                heading: 0.0,
                speed: 2.0,
            })
            .collect(),
        waypoints: Vec::new(),
        events: Vec::new(),
    }
}
