//! Scenario files and the two built-in waterway layouts.

use super::HarnessError;
use crate::dynamics::ShipParams;
use crate::frenetplan::FrenetConfig;
use crate::geom::{Pose, Vec2};
use crate::globalplan::{
    build_graph, dijkstra, parse_overpass, project_latlon, resample_polyline, resample_route, LatLon,
};
use crate::gridmap::{Cell, Footprint, OccupancyGrid, FREE, OBSTACLE};
use crate::mprl::MprlConfig;
use crate::simenv::EnvConfig;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const DATA_DIR_ENV: &str = "WATERNAV_DATA_DIR";

/// Directory holding committed maps, configs and checkpoints.
pub fn data_dir() -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/data")),
    }
}

/// Resolves a scenario argument: an existing path, or a short name such as
/// `straight` looked up in the data directory.
pub fn resolve_scenario(arg: &str) -> Result<PathBuf, HarnessError> {
    let p = PathBuf::from(arg);
    if p.is_file() {
        return Ok(p);
    }
    let dir = data_dir();
    for cand in [dir.join(format!("scenario_{arg}.json")), dir.join(format!("{arg}.json"))] {
        if cand.is_file() {
            return Ok(cand);
        }
    }
    Err(HarnessError::MissingFile(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapRef {
    pub file: String,
    pub cell_size: f64,
    pub origin: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RouteSpec {
    Inline {
        waypoints: Vec<Vec2>,
    },
    /// Dijkstra over a cached waterway response.
    Graph {
        fixture: String,
        reference: LatLon,
        from: i64,
        to: i64,
        min_spacing: f64,
        max_spacing: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrenetSettings {
    pub config: String,
    /// Denser reference used instead of the global route.
    #[serde(default)]
    pub route: Option<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSettings {
    pub checkpoint: String,
    pub waypoints: usize,
    /// Env steps simulated per emitted waypoint.
    pub stride: usize,
    /// Distance normalizer the agent was trained with, m.
    pub feature_d_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSettings {
    pub mprl: MprlConfig,
    pub frenet: FrenetSettings,
    pub ppo: PpoSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub map: MapRef,
    pub start: Pose,
    pub goal: Vec2,
    pub route: RouteSpec,
    pub planners: PlannerSettings,
    pub env: EnvConfig,
    pub ship: String,
    pub footprint: Footprint,
    /// Local-waypoint acceptance radius for line-of-sight following, m.
    pub accept_radius: f64,
    pub cruise_speed: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Scenario(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// A scenario with every referenced file loaded.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub grid: Arc<OccupancyGrid>,
    pub params: Arc<ShipParams>,
    /// Global waypoints, first = start position, last = goal.
    pub route: Vec<Vec2>,
    pub frenet: FrenetConfig,
    pub frenet_route: Vec<Vec2>,
    pub base_dir: PathBuf,
}

impl LoadedScenario {
    pub fn resolve(&self, file: &str) -> PathBuf {
        self.base_dir.join(file)
    }
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|_| HarnessError::MissingFile(path.to_path_buf()))
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, HarnessError> {
    let text = String::from_utf8_lossy(&read(path)?).into_owned();
    let scenario = Scenario::from_json(&text)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    load_with_base(scenario, base_dir)
}

/// Loads the files of `scenario` relative to `base_dir` and checks the
/// scenario invariants.
pub fn load_with_base(scenario: Scenario, base_dir: PathBuf) -> Result<LoadedScenario, HarnessError> {
    let map_bytes = read(&base_dir.join(&scenario.map.file))?;
    let grid = OccupancyGrid::from_pgm(&map_bytes, scenario.map.cell_size, scenario.map.origin)?;
    let ship_path = base_dir.join(&scenario.ship);
    if !ship_path.is_file() {
        return Err(HarnessError::MissingFile(ship_path));
    }
    let params = ShipParams::load(&ship_path)?;
    let frenet_path = base_dir.join(&scenario.planners.frenet.config);
    let frenet = FrenetConfig::load(&frenet_path).map_err(|_| HarnessError::MissingFile(frenet_path))?;
    scenario.env.validate()?;
    let start = scenario.start.position;
    let goal = scenario.goal;
    for (what, p) in [("start", start), ("goal", goal)] {
        if !grid.is_free(grid.cell_of(p)) {
            return Err(HarnessError::Scenario(format!("{what} ({:.1}, {:.1}) is not in free water", p.x, p.y)));
        }
    }
    if grid.footprint_collision(scenario.start, &scenario.footprint) {
        return Err(HarnessError::Scenario("start pose collides".into()));
    }
    let route = match &scenario.route {
        RouteSpec::Inline { waypoints } => {
            let mut w = waypoints.clone();
            if w.first() != Some(&start) {
                w.insert(0, start);
            }
            if w.last() != Some(&goal) {
                w.push(goal);
            }
            w
        }
        RouteSpec::Graph {
            fixture,
            reference,
            from,
            to,
            min_spacing,
            max_spacing,
        } => {
            let body = String::from_utf8_lossy(&read(&base_dir.join(fixture))?).into_owned();
            let data = parse_overpass(&body)?;
            let nodes = project_latlon(&data.nodes, *reference)?;
            let g = build_graph(&nodes, &data.ways)?;
            let path = dijkstra(&g, *from, *to)?;
            resample_route(&g, &path, *min_spacing, *max_spacing, start, goal)?.waypoints
        }
    };
    let frenet_route = scenario.planners.frenet.route.clone().unwrap_or_else(|| route.clone());
    Ok(LoadedScenario {
        grid: Arc::new(grid),
        params: Arc::new(params),
        route,
        frenet,
        frenet_route,
        base_dir,
        scenario,
    })
}

/// Axis-aligned obstacle rectangle in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub min: Vec2,
    pub max: Vec2,
}

impl Block {
    fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

pub const CELL_SIZE: f64 = 3.125;

/// Grid whose cells are free where their centers fall inside one of the
/// `water` rectangles and outside every `blocks` rectangle.
pub fn raster(width: usize, height: usize, water: &[Block], blocks: &[Block]) -> OccupancyGrid {
    let origin = Vec2::new(CELL_SIZE / 2.0, CELL_SIZE / 2.0);
    let mut g = OccupancyGrid::filled(width, height, CELL_SIZE, origin, OBSTACLE).expect("nonzero grid");
    for j in 0..height {
        for i in 0..width {
            let c = g.cell_center(Cell {
                i: i as i64,
                j: j as i64,
            });
            if water.iter().any(|b| b.contains(c)) && !blocks.iter().any(|b| b.contains(c)) {
                g.set(i, j, FREE);
            }
        }
    }
    g
}

/// Breadth-first search over free cells after growing obstacles by
/// `inflate` meters.
pub fn corridor_exists(grid: &OccupancyGrid, from: Vec2, to: Vec2, inflate: f64) -> bool {
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let r = (inflate / grid.cell_size()).ceil() as i64;
    let blocked = |c: Cell| -> bool {
        for dj in -r..=r {
            for di in -r..=r {
                if ((di * di + dj * dj) as f64).sqrt() * grid.cell_size() > inflate + 1e-9 {
                    continue;
                }
                if !grid.is_free(Cell {
                    i: c.i + di,
                    j: c.j + dj,
                }) {
                    return true;
                }
            }
        }
        false
    };
    let (s, t) = (grid.cell_of(from), grid.cell_of(to));
    if blocked(s) || blocked(t) {
        return false;
    }
    let idx = |c: Cell| (c.j * w + c.i) as usize;
    let mut seen = vec![false; (w * h) as usize];
    let mut queue = VecDeque::from([s]);
    seen[idx(s)] = true;
    while let Some(c) = queue.pop_front() {
        if c == t {
            return true;
        }
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = Cell {
                i: c.i + di,
                j: c.j + dj,
            };
            if grid.in_bounds(n) && !seen[idx(n)] && !blocked(n) {
                seen[idx(n)] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

fn planners(frenet_route: Option<Vec<Vec2>>) -> PlannerSettings {
    PlannerSettings {
        mprl: MprlConfig {
            n: 12,
            ..MprlConfig::default()
        },
        frenet: FrenetSettings {
            config: "frenet_default.json".into(),
            route: frenet_route,
        },
        ppo: PpoSettings {
            checkpoint: "ppo_checkpoint.bin".into(),
            waypoints: 4,
            stride: 4,
            feature_d_max: 450.0,
        },
    }
}

/// Distance normalizer of 1.5 times the start-to-goal distance.
fn scenario_env(start: Vec2, goal: Vec2) -> EnvConfig {
    EnvConfig {
        d_max: 1.5 * start.distance(goal),
        w_h: 0.3,
        max_steps: 400,
        ..EnvConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub scenario: Scenario,
    pub grid: OccupancyGrid,
    pub blocks: Vec<Block>,
}

/// Straight channel between two quay walls with four berthed vessels on
/// alternating sides; the fourth reaches past the centerline.
pub fn build_scenario_straight() -> BuiltScenario {
    let (w, h) = (416, 80);
    let channel = Block {
        min: Vec2::new(0.0, 31.25),
        max: Vec2::new(w as f64 * CELL_SIZE, 218.75),
    };
    let blocks = vec![
        Block {
            min: Vec2::new(180.0, 0.0),
            max: Vec2::new(280.0, 135.0),
        },
        Block {
            min: Vec2::new(440.0, 115.0),
            max: Vec2::new(540.0, 250.0),
        },
        Block {
            min: Vec2::new(700.0, 0.0),
            max: Vec2::new(800.0, 135.0),
        },
        Block {
            min: Vec2::new(960.0, 80.0),
            max: Vec2::new(1060.0, 250.0),
        },
    ];
    let grid = raster(w, h, &[channel], &blocks);
    let start = Pose::new(40.0, 125.0, 0.0);
    let goal = Vec2::new(1240.0, 125.0);
    let route = resample_polyline(&[start.position, goal], 150.0, 200.0)
        .expect("valid spacing")
        .waypoints;
    BuiltScenario {
        scenario: Scenario {
            name: "straight".into(),
            map: MapRef {
                file: "scenario_straight.pgm".into(),
                cell_size: CELL_SIZE,
                origin: grid.origin(),
            },
            start,
            goal,
            route: RouteSpec::Inline { waypoints: route },
            planners: planners(None),
            env: scenario_env(start.position, goal),
            ship: "ship_default.toml".into(),
            footprint: Footprint::default(),
            accept_radius: 10.0,
            cruise_speed: 2.0,
            seed: 0,
        },
        grid,
        blocks,
    }
}

/// Waterway running east, then turning left (north), with one vessel before
/// the turn and one in the northbound leg.
pub fn build_scenario_corner() -> BuiltScenario {
    let (w, h) = (240, 320);
    let east = Block {
        min: Vec2::new(0.0, 31.25),
        max: Vec2::new(700.0, 218.75),
    };
    let north = Block {
        min: Vec2::new(512.5, 31.25),
        max: Vec2::new(700.0, h as f64 * CELL_SIZE),
    };
    let blocks = vec![
        Block {
            min: Vec2::new(300.0, 140.0),
            max: Vec2::new(400.0, 250.0),
        },
        Block {
            min: Vec2::new(480.0, 380.0),
            max: Vec2::new(620.0, 480.0),
        },
    ];
    let grid = raster(w, h, &[east, north], &blocks);
    let start = Pose::new(40.0, 125.0, 0.0);
    let bend = Vec2::new(606.25, 125.0);
    let goal = Vec2::new(606.25, 960.0);
    let poly = [start.position, bend, goal];
    let route = resample_polyline(&poly, 150.0, 200.0).expect("valid spacing").waypoints;
    let dense = resample_polyline(&poly, 15.0, 30.0).expect("valid spacing").waypoints;
    BuiltScenario {
        scenario: Scenario {
            name: "corner".into(),
            map: MapRef {
                file: "scenario_corner.pgm".into(),
                cell_size: CELL_SIZE,
                origin: grid.origin(),
            },
            start,
            goal,
            route: RouteSpec::Inline { waypoints: route },
            planners: planners(Some(dense)),
            env: scenario_env(start.position, goal),
            ship: "ship_default.toml".into(),
            footprint: Footprint::default(),
            accept_radius: 10.0,
            cruise_speed: 2.0,
            seed: 0,
        },
        grid,
        blocks,
    }
}

/// Writes the scenario JSON and map of `built` into `dir`.
pub fn write_built(built: &BuiltScenario, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(&built.scenario.map.file), built.grid.to_pgm())?;
    std::fs::write(
        dir.join(format!("scenario_{}.json", built.scenario.name)),
        built.scenario.to_json(),
    )?;
    Ok(())
}
