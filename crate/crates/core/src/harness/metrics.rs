use super::runner::{EventKind, RunLog};
use super::HarnessError;
use crate::gridmap::OccupancyGrid;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub planner: String,
    pub seed: u64,
    /// Terminal state: goal, collision, handover or step_cap.
    pub status: String,
    pub goal_reached: bool,
    pub collision_count: usize,
    pub handover_count: usize,
    pub path_length: f64,
    pub fraction_below_10: f64,
    pub runtime_s: f64,
    /// Nearest-obstacle distance of every logged pose, m.
    pub distances: Vec<f64>,
}

impl Metrics {
    /// Share of logged poses strictly closer than `x` meters to an obstacle.
    pub fn fraction_below(&self, x: f64) -> f64 {
        fraction_below(&self.distances, x)
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|_| HarnessError::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn fraction_below(distances: &[f64], x: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d < x).count() as f64 / distances.len() as f64
}

/// Distance from each logged pose to the nearest obstacle cell center;
/// poses outside the map count as touching an obstacle.
pub fn pose_distances(log: &RunLog, grid: &OccupancyGrid) -> Vec<f64> {
    log.poses
        .iter()
        .map(|p| grid.nearest_obstacle_distance(p.position()).unwrap_or(0.0))
        .collect()
}

pub fn compute_metrics(log: &RunLog, grid: &OccupancyGrid) -> Result<Metrics, HarnessError> {
    if log.poses.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let distances = pose_distances(log, grid);
    let path_length = log
        .poses
        .windows(2)
        .map(|w| w[0].position().distance(w[1].position()))
        .sum();
    Ok(Metrics {
        scenario: log.info.scenario.clone(),
        planner: log.info.planner.clone(),
        seed: log.info.seed,
        status: log.status().to_string(),
        goal_reached: log.count(EventKind::Goal) > 0,
        collision_count: log.count(EventKind::Collision),
        handover_count: log.count(EventKind::Handover),
        path_length,
        fraction_below_10: fraction_below(&distances, 10.0),
        runtime_s: log.info.runtime_s,
        distances,
    })
}

/// One row per run, as written by `compare`.
pub fn write_table(metrics: &[Metrics], path: &Path) -> Result<(), HarnessError> {
    #[derive(Serialize)]
    struct Row<'a> {
        planner: &'a str,
        status: &'a str,
        goal_reached: bool,
        collision_count: usize,
        handover_count: usize,
        path_length: f64,
        fraction_below_10: f64,
        runtime_s: f64,
    }
    let mut w = csv::Writer::from_path(path)?;
    for m in metrics {
        w.serialize(Row {
            planner: &m.planner,
            status: &m.status,
            goal_reached: m.goal_reached,
            collision_count: m.collision_count,
            handover_count: m.handover_count,
            path_length: m.path_length,
            fraction_below_10: m.fraction_below_10,
            runtime_s: m.runtime_s,
        })?;
    }
    w.flush()?;
    Ok(())
}
