use super::metrics::{compute_metrics, write_table, Metrics};
use super::plot::emit_plot;
use super::runner::{run_episode, RunLog};
use super::scenario::{
    build_scenario_corner, build_scenario_straight, load_scenario, resolve_scenario, write_built, LoadedScenario,
};
use super::{build_planner, HarnessError, PlannerOptions, TrainConfig};
use crate::agent::{evaluate, train, PpoConfig};
use crate::geom::Vec2;
use crate::globalplan::{build_graph, dijkstra, parse_overpass, project_latlon, resample_route, LatLon};
use crate::gridmap::load_grid;
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Parser)]
#[command(name = "waternav", about = "Local path planning for inland vessels", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one planner on a scenario.
    Run {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        planner: String,
        /// Recorded in the log; every planner is deterministic.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// MPRL value function: heuristic or learned.
        #[arg(long)]
        value: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the PPO agent on open water.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several planners on one scenario and tabulate their metrics.
    Compare {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_delimiter = ',')]
        planners: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        value: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Plot a saved run over its map.
    Plot {
        /// Run directory written by `run`.
        #[arg(long)]
        log: PathBuf,
        /// Scenario file, or a graymap with the default cell size and origin.
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Shortest waterway route between two nodes of a cached Overpass response.
    Route {
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long)]
        from: i64,
        #[arg(long)]
        to: i64,
        #[arg(long, default_value_t = 150.0)]
        min_spacing: f64,
        #[arg(long, default_value_t = 200.0)]
        max_spacing: f64,
    },
    /// Regenerate the built-in scenario files.
    Scenarios {
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            scenario,
            planner,
            seed,
            out,
            value,
            checkpoint,
        } => {
            let mut sc = load_scenario(&resolve_scenario(&scenario)?)?;
            if let Some(s) = seed {
                sc.scenario.seed = s;
            }
            let opts = PlannerOptions { value, checkpoint };
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}_{}", sc.scenario.name, planner)));
            let (_, m) = run_and_save(&sc, &planner, &opts, &out)?;
            emit_plot(&[RunLog::read_dir(&out)?], &sc.grid, &out.join("path.svg"))?;
            println!("{}", summary_line(&m));
            Ok(())
        }
        Command::Train { config, out, seed } => cmd_train(&config, &out, seed),
        Command::Compare {
            scenario,
            planners,
            out,
            value,
            checkpoint,
        } => {
            let sc = load_scenario(&resolve_scenario(&scenario)?)?;
            let opts = PlannerOptions { value, checkpoint };
            if planners.is_empty() {
                return Err(HarnessError::UnknownPlanner(String::new()));
            }
            // fail fast on bad names before spending time on runs
            for p in &planners {
                build_planner(&sc, p, &opts)?;
            }
            let results: Vec<Result<(RunLog, Metrics), HarnessError>> = planners
                .par_iter()
                .map(|p| run_and_save(&sc, p, &opts, &out.join(p)))
                .collect();
            let mut logs = Vec::new();
            let mut metrics = Vec::new();
            for r in results {
                let (l, m) = r?;
                println!("{}", summary_line(&m));
                logs.push(l);
                metrics.push(m);
            }
            write_table(&metrics, &out.join("metrics.csv"))?;
            emit_plot(&logs, &sc.grid, &out.join("paths.svg"))?;
            Ok(())
        }
        Command::Plot { log, map, out } => {
            let run = RunLog::read_dir(&log)?;
            let grid = if map.extension().is_some_and(|e| e == "json") {
                load_scenario(&map)?.grid.as_ref().clone()
            } else {
                let bytes = std::fs::read(&map).map_err(|_| HarnessError::MissingFile(map.clone()))?;
                let cs = super::scenario::CELL_SIZE;
                load_grid(&bytes, cs, Vec2::new(cs / 2.0, cs / 2.0))?
            };
            for f in emit_plot(&[run], &grid, &out)? {
                println!("{}", f.display());
            }
            Ok(())
        }
        Command::Route {
            fixture,
            from,
            to,
            min_spacing,
            max_spacing,
        } => {
            let body = std::fs::read_to_string(&fixture).map_err(|_| HarnessError::MissingFile(fixture.clone()))?;
            let data = parse_overpass(&body)?;
            let reference = data.nodes.get(&from).copied().unwrap_or(LatLon { lat: 0.0, lon: 0.0 });
            let nodes = project_latlon(&data.nodes, reference)?;
            let g = build_graph(&nodes, &data.ways)?;
            let path = dijkstra(&g, from, to)?;
            let start = g.node(from).ok_or(crate::globalplan::PlanError::MissingNode(from))?;
            let goal = g.node(to).ok_or(crate::globalplan::PlanError::MissingNode(to))?;
            let route = resample_route(&g, &path, min_spacing, max_spacing, start, goal)?;
            let ids: Vec<String> = path.iter().map(i64::to_string).collect();
            println!("nodes: {}", ids.join(" "));
            println!("length_m: {:.1}", route.length());
            for w in &route.waypoints {
                println!("{:.2},{:.2}", w.x, w.y);
            }
            Ok(())
        }
        Command::Scenarios { out } => {
            for b in [build_scenario_straight(), build_scenario_corner()] {
                write_built(&b, &out)?;
            }
            Ok(())
        }
    }
}

/// Runs `planner` on `sc`, writing the log and metrics into `out`.
pub fn run_and_save(
    sc: &LoadedScenario,
    planner: &str,
    opts: &PlannerOptions,
    out: &Path,
) -> Result<(RunLog, Metrics), HarnessError> {
    let mut p = build_planner(sc, planner, opts)?;
    let log = run_episode(sc, p.as_mut())?;
    let m = compute_metrics(&log, &sc.grid)?;
    log.write_dir(out)?;
    m.write(&out.join("metrics.json"))?;
    Ok((log, m))
}

pub fn summary_line(m: &Metrics) -> String {
    format!(
        "planner={} status={} goal_reached={} collisions={} handovers={} path_length={:.1} fraction_below_10={:.4} runtime_s={:.2}",
        m.planner,
        m.status,
        m.goal_reached,
        m.collision_count,
        m.handover_count,
        m.path_length,
        m.fraction_below_10,
        m.runtime_s
    )
}

#[derive(Debug, Serialize)]
struct EvalReport {
    seed: u64,
    env_steps: usize,
    episodes: usize,
    goals: usize,
    collisions: usize,
    goal_rate: f64,
    train_seconds: f64,
}

fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), HarnessError> {
    let mut cfg = TrainConfig::load(config)?;
    if let Some(s) = seed {
        cfg.ppo.seed = s;
    }
    let env = cfg.build_env(config.parent().unwrap_or(Path::new(".")))?;
    let t0 = Instant::now();
    let ppo: &PpoConfig = &cfg.ppo;
    let result = train(env.clone(), |rng| cfg.sample_episode(rng), ppo, Some(out))?;
    let train_seconds = t0.elapsed().as_secs_f64();
    let mut eval_env = env;
    let summary = evaluate(
        &result.params,
        &mut eval_env,
        |rng| cfg.sample_episode(rng),
        cfg.eval_episodes,
        cfg.eval_seed,
    )?;
    let report = EvalReport {
        seed: ppo.seed,
        env_steps: result.curve.last().map_or(0, |c| c.env_steps),
        episodes: summary.episodes,
        goals: summary.goals,
        collisions: summary.collisions,
        goal_rate: summary.goal_rate(),
        train_seconds,
    };
    std::fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "seed={} env_steps={} goal_rate={:.2} train_seconds={:.0}",
        report.seed, report.env_steps, report.goal_rate, report.train_seconds
    );
    Ok(())
}
