//! Scenarios, the episode runner, metrics, plots and the command line.

pub mod cli;
pub mod metrics;
pub mod plot;
pub mod runner;
pub mod scenario;

use crate::agent::{load_checkpoint, HeuristicValue, LearnedValue, PpoConfig, ValueFunction};
use crate::geom::{Pose, Vec2};
use crate::dynamics::ShipParams;
use crate::gridmap::{Footprint, OccupancyGrid, FREE};
use crate::simenv::{EnvConfig, ShipEnv};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub use metrics::{compute_metrics, fraction_below, Metrics};
pub use plot::emit_plot;
pub use runner::{los_setpoint, run_episode, EventKind, Planner, PlannerOutput, RunLog};
pub use scenario::{build_scenario_corner, build_scenario_straight, load_scenario, LoadedScenario, Scenario};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("waypoint list is empty")]
    NoWaypoints,
    #[error("run log is empty")]
    EmptyLog,
    #[error("cannot write {path}: {reason}")]
    Unwritable { path: PathBuf, reason: String },
    #[error("unknown planner '{0}' (expected mprl, ppo or frenet)")]
    UnknownPlanner(String),
    #[error("unknown value function '{0}' (expected heuristic or learned)")]
    UnknownValue(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] crate::gridmap::GridError),
    #[error(transparent)]
    Params(#[from] crate::dynamics::ParamsError),
    #[error(transparent)]
    Env(#[from] crate::simenv::EnvError),
    #[error(transparent)]
    Route(#[from] crate::globalplan::PlanError),
    #[error(transparent)]
    Frenet(#[from] crate::frenetplan::FrenetError),
    #[error(transparent)]
    Agent(#[from] crate::agent::AgentError),
    #[error(transparent)]
    Mprl(#[from] crate::mprl::MprlError),
}

/// Simulated seconds between Frenet planning cycles.
pub const FRENET_REPLAN_SECONDS: f64 = 4.0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlannerOptions {
    /// `heuristic` (default) or `learned` for MPRL.
    pub value: Option<String>,
    /// Overrides the scenario's PPO checkpoint.
    pub checkpoint: Option<PathBuf>,
}

fn checkpoint_path(sc: &LoadedScenario, opts: &PlannerOptions) -> PathBuf {
    opts.checkpoint
        .clone()
        .unwrap_or_else(|| sc.resolve(&sc.scenario.planners.ppo.checkpoint))
}

fn load_params(path: &Path) -> Result<crate::agent::MlpParams, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::MissingFile(path.to_path_buf()));
    }
    Ok(load_checkpoint(path)?.0)
}

/// Scenario env config with the distance normalizer the agent was trained
/// with, so its features match training.
fn feature_cfg(sc: &LoadedScenario) -> EnvConfig {
    EnvConfig {
        d_max: sc.scenario.planners.ppo.feature_d_max,
        ..sc.scenario.env.clone()
    }
}

/// Instantiates a planner by name with the scenario's settings.
pub fn build_planner(sc: &LoadedScenario, name: &str, opts: &PlannerOptions) -> Result<Box<dyn Planner>, HarnessError> {
    let s = &sc.scenario;
    let step_seconds = sc.params.dt * s.env.substeps as f64;
    match name {
        "mprl" => {
            let cfg = s.planners.mprl.clone();
            cfg.validate(sc.params.v_max)?;
            let value: Box<dyn ValueFunction> = match opts.value.as_deref().unwrap_or("heuristic") {
                "heuristic" => Box::new(HeuristicValue::new(&s.env, sc.params.v_max, sc.params.dt)),
                "learned" => Box::new(LearnedValue {
                    params: load_params(&checkpoint_path(sc, opts))?,
                    cfg: feature_cfg(sc),
                    v_max: sc.params.v_max,
                    value_scale: PpoConfig::default().value_scale,
                }),
                other => return Err(HarnessError::UnknownValue(other.to_string())),
            };
            let sim = match opts.value.as_deref() {
                Some("learned") => Some(ShipEnv::new(sc.grid.clone(), sc.params.clone(), s.footprint, feature_cfg(sc))?),
                _ => None,
            };
            Ok(Box::new(runner::MprlPlanner { cfg, value, sim }))
        }
        "ppo" => {
            let p = &s.planners.ppo;
            if p.waypoints == 0 || p.stride == 0 {
                return Err(HarnessError::Scenario("ppo waypoints and stride must be positive".into()));
            }
            let sim = ShipEnv::new(sc.grid.clone(), sc.params.clone(), s.footprint, feature_cfg(sc))?;
            Ok(Box::new(runner::PpoPlanner {
                params: load_params(&checkpoint_path(sc, opts))?,
                num_waypoints: p.waypoints,
                stride: p.stride,
                sim,
            }))
        }
        "frenet" => {
            sc.frenet.validate()?;
            Ok(Box::new(runner::FrenetPlanner::new(
                &sc.frenet_route,
                sc.frenet.clone(),
                step_seconds,
                FRENET_REPLAN_SECONDS,
            )?))
        }
        other => Err(HarnessError::UnknownPlanner(other.to_string())),
    }
}

/// PPO training setup on open water.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub env: EnvConfig,
    /// Ship parameter file; built-in defaults when absent.
    pub ship: Option<String>,
    /// Side length of the square open-water map, cells.
    pub arena_cells: usize,
    /// Start-to-goal distance, m.
    pub goal_distance: f64,
    /// Maximum offset of the start from the arena center, m.
    pub start_jitter: f64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            env: EnvConfig {
                goal_terminates: false,
                max_steps: 60,
                ..EnvConfig::default()
            },
            ship: None,
            arena_cells: 260,
            goal_distance: 300.0,
            start_jitter: 50.0,
            eval_episodes: 50,
            eval_seed: 1000,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|_| HarnessError::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Open-water env; `ship` is resolved against `base_dir`.
    pub fn build_env(&self, base_dir: &Path) -> Result<ShipEnv, HarnessError> {
        let params = match &self.ship {
            Some(f) => ShipParams::load(&base_dir.join(f))?,
            None => ShipParams::default(),
        };
        Ok(ShipEnv::new(
            Arc::new(self.arena()),
            Arc::new(params),
            Footprint::default(),
            self.env.clone(),
        )?)
    }

    pub fn arena(&self) -> OccupancyGrid {
        let cs = scenario::CELL_SIZE;
        OccupancyGrid::filled(self.arena_cells, self.arena_cells, cs, Vec2::new(cs / 2.0, cs / 2.0), FREE)
            .expect("nonzero arena")
    }

    /// Start pose with random heading near the arena center and a target
    /// `goal_distance` away in a random direction.
    pub fn sample_episode(&self, rng: &mut ChaCha8Rng) -> (Pose, Vec2) {
        use std::f64::consts::PI;
        let c = self.arena_cells as f64 * scenario::CELL_SIZE / 2.0;
        let j = self.start_jitter;
        let start = Vec2::new(c + rng.gen_range(-j..=j), c + rng.gen_range(-j..=j));
        let heading = rng.gen_range(-PI..PI);
        let bearing = rng.gen_range(-PI..PI);
        let target = start + Vec2::from_angle(bearing) * self.goal_distance;
        (Pose::new(start.x, start.y, heading), target)
    }
}
