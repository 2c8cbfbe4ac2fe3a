//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

mod common;

use std::time::Instant;
use waternav::agent::{evaluate, load_checkpoint, read_curve, HeuristicValue};
use waternav::dynamics::{drag_force, ShipParams};
use waternav::frenetplan::{fit_reference, generate_candidates, jerk_cost, total_cost, FrenetConfig, FrenetState};
use waternav::geom::Vec2;
use waternav::harness::metrics::Metrics;
use waternav::harness::scenario::load_scenario;
use waternav::harness::{build_planner, compute_metrics, run_episode, LoadedScenario, PlannerOptions, RunLog, TrainConfig};
use waternav::mprl::{plan, unfold, MprlConfig};
use waternav::simenv::{reward, EnvConfig, ShipEnv};

/// Criteria expected to fail, each with its analysis in the project notes.
const KNOWN_FAILURES: &[usize] = &[];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> LoadedScenario {
    load_scenario(&common::data_dir().join(format!("scenario_{name}.json"))).unwrap()
}

fn run(sc: &LoadedScenario, planner: &str, value: Option<&str>) -> (RunLog, Metrics) {
    let opts = PlannerOptions {
        value: value.map(str::to_string),
        checkpoint: None,
    };
    let mut p = build_planner(sc, planner, &opts).unwrap();
    let log = run_episode(sc, p.as_mut()).unwrap();
    let m = compute_metrics(&log, &sc.grid).unwrap();
    (log, m)
}

fn clean_goal(m: &Metrics) -> bool {
    m.goal_reached && m.collision_count == 0 && m.handover_count == 0
}

fn describe(m: &Metrics) -> String {
    format!(
        "{} status={} collisions={} handovers={} fraction_below_10={:.4} runtime={:.2}s",
        m.planner, m.status, m.collision_count, m.handover_count, m.fraction_below_10, m.runtime_s
    )
}

fn c1_straight_mprl() -> Verdict {
    let sc = scenario("straight");
    let (_, m) = run(&sc, "mprl", None);
    verdict(clean_goal(&m) && m.runtime_s < 300.0, format!("heuristic value, {}", describe(&m)))
}

fn c2_straight_frenet() -> Verdict {
    let sc = scenario("straight");
    let (_, m) = run(&sc, "frenet", None);
    verdict(m.goal_reached && m.collision_count == 0, describe(&m))
}

fn c3_safety_ordering() -> Verdict {
    let sc = scenario("straight");
    let (_, learned) = run(&sc, "mprl", Some("learned"));
    let (_, heuristic) = run(&sc, "mprl", None);
    let (_, frenet) = run(&sc, "frenet", None);
    verdict(
        clean_goal(&learned) && learned.fraction_below_10 < frenet.fraction_below_10,
        format!(
            "mprl (learned value) {:.4} < frenet {:.4}; heuristic-value mprl {:.4} (informational)",
            learned.fraction_below_10, frenet.fraction_below_10, heuristic.fraction_below_10
        ),
    )
}

fn c4_corner() -> Verdict {
    let sc = scenario("corner");
    let (_, mprl) = run(&sc, "mprl", None);
    let (_, frenet) = run(&sc, "frenet", None);
    verdict(
        clean_goal(&mprl),
        format!(
            "{}; frenet terminal status {} (informational)",
            describe(&mprl),
            frenet.status
        ),
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + b.abs())
}

fn c5_formulas() -> Verdict {
    let mut failures = Vec::new();
    let p = ShipParams {
        rho: 1000.0,
        drag_coefficient: 1.0,
        area: 2.0,
        ..Default::default()
    };
    if !close(drag_force(&p, 2.0), 4000.0) || drag_force(&p, 0.0) != 0.0 {
        failures.push("drag");
    }
    let cfg = EnvConfig {
        r_goal_reached: 10.0,
        ..Default::default()
    };
    let at_goal = reward(0.0, false, true, 0.0, &cfg).total;
    let at_max = reward(cfg.d_max, false, false, 0.0, &cfg).total;
    let cfg = EnvConfig {
        r_collision: -20.0,
        w_h: 1.0,
        a_max: 0.5,
        ..Default::default()
    };
    let crash = reward(cfg.d_max / 2.0, true, false, cfg.a_max, &cfg);
    let parts = crash.distance + crash.goal + crash.collision + crash.heading;
    if !close(at_goal, 11.0) || !close(at_max, 0.0) || !close(crash.total, -20.0) || !close(parts, crash.total) {
        failures.push("reward");
    }
    let seq = unfold(0.1, 0.05, 3, 0.3);
    let saturated = unfold(0.3, 0.05, 4, 0.3);
    if seq.len() != 3
        || !seq.iter().zip([0.1, 0.15, 0.2]).all(|(a, b)| close(*a, b))
        || saturated.iter().any(|&a| a != 0.3)
    {
        failures.push("unfold");
    }
    let fcfg = FrenetConfig::default();
    let reference = fit_reference(&[Vec2::new(0.0, 0.0), Vec2::new(200.0, 0.0), Vec2::new(400.0, 0.0)]).unwrap();
    let fs = FrenetState {
        sigma: 5.0,
        sigma_d: 1.4,
        sigma_dd: 0.02,
        delta: 3.5,
        delta_d: -0.2,
        delta_dd: 0.01,
    };
    let cands = generate_candidates(&fs, &reference, &fcfg);
    let colliders = [&cands[3], &cands[10]];
    for c in cands.iter().step_by(5) {
        let b = total_cost(c, &colliders, &fcfg);
        let lat = fcfg.k_j * jerk_cost(&c.delta_poly, c.t_end) + fcfg.k_t * c.t_end + fcfg.k_delta * c.delta_end.powi(2);
        let lon = fcfg.k_j * jerk_cost(&c.sigma_poly, c.t_end)
            + fcfg.k_t * c.t_end
            + fcfg.k_sigma * (c.sigma_d_end - fcfg.target_speed).powi(2);
        let col: f64 = colliders
            .iter()
            .map(|t| (fcfg.k_d - (c.delta_end - t.delta_end).abs()).exp())
            .sum();
        let total = fcfg.k_lat * lat + fcfg.k_lon * lon + fcfg.k_col * col;
        if !(close(b.lateral, lat) && close(b.longitudinal, lon) && close(b.collision, col) && close(b.total, total)) {
            failures.push("frenet cost");
            break;
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            "drag, reward, unfolding and Frenet cost examples exact to 1e-12".to_string()
        } else {
            format!("mismatch in {}", failures.join(", "))
        },
    )
}

fn c6_oracles() -> Verdict {
    let t0 = Instant::now();
    let suites = [
        ("n-step return", common::n_step_return_suite(1000)),
        ("dijkstra", common::dijkstra_suite(200)),
        ("swept collision", common::swept_collision_suite(200)),
        ("jerk", common::jerk_suite(100)),
        ("gradients", common::gradient_suite(10)),
    ];
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<String> = suites
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    verdict(
        failed.is_empty() && secs < 120.0,
        if failed.is_empty() {
            format!("5 suites agree in {secs:.1}s")
        } else {
            failed.join("; ")
        },
    )
}

fn c7_determinism() -> Verdict {
    let sc = scenario("straight");
    let (a, _) = run(&sc, "mprl", None);
    let (b, _) = run(&sc, "mprl", None);
    let (la, _) = run(&sc, "mprl", Some("learned"));
    let (lb, _) = run(&sc, "mprl", Some("learned"));
    let episodes = a.same_run(&b) && la.same_run(&lb);

    let s = &sc.scenario;
    let mut env = ShipEnv::new(sc.grid.clone(), sc.params.clone(), s.footprint, s.env.clone()).unwrap();
    env.reset(s.start, sc.route[1]).unwrap();
    let value = HeuristicValue::new(&s.env, sc.params.v_max, sc.params.dt);
    let snap = env.snapshot();
    let serial = MprlConfig {
        parallel: false,
        ..s.planners.mprl.clone()
    };
    let parallel = MprlConfig {
        parallel: true,
        ..s.planners.mprl.clone()
    };
    let p0 = plan(&env, &snap, &serial, &value).unwrap();
    let p1 = plan(&env, &snap, &parallel, &value).unwrap();
    let p2 = plan(&env, &snap, &parallel, &value).unwrap();
    let plans = p0 == p1 && p1 == p2;
    verdict(
        episodes && plans,
        format!("repeated episodes identical: {episodes}; serial and parallel plans identical: {plans}"),
    )
}

fn c8_ppo() -> Verdict {
    let dir = common::data_dir();
    let cfg = TrainConfig::load(&dir.join("train_default.json")).unwrap();
    let (params, seed) = load_checkpoint(&dir.join("ppo_checkpoint.bin")).unwrap();
    let mut env = cfg.build_env(&dir).unwrap();
    let summary = evaluate(&params, &mut env, |rng| cfg.sample_episode(rng), 50, cfg.eval_seed).unwrap();
    let curve = read_curve(&dir.join("training_curve.csv")).unwrap();
    let steps = curve.last().map_or(usize::MAX, |c| c.env_steps);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("train_eval.json")).unwrap()).unwrap();
    let train_s = report["train_seconds"].as_f64().unwrap_or(f64::INFINITY);
    let sc = scenario("straight");
    let (_, straight) = run(&sc, "ppo", None);
    let gate = summary.goal_rate() >= 0.8 && steps <= 500_000 && seed <= 2 && train_s < 1800.0;
    verdict(
        gate && !straight.goal_reached,
        format!(
            "seed {seed}, {steps} env steps, {train_s:.0}s training, open-water goal rate {:.2} over 50 episodes; \
             ppo on straight: status {} (expected to miss the goal)",
            summary.goal_rate(),
            straight.status
        ),
    )
}

#[test]
fn acceptance_gate() {
    let criteria: [(usize, &str, fn() -> Verdict); 8] = [
        (1, "straight scenario, mprl", c1_straight_mprl),
        (2, "straight scenario, frenet", c2_straight_frenet),
        (3, "clearance ordering", c3_safety_ordering),
        (4, "corner scenario", c4_corner),
        (5, "formula exactness", c5_formulas),
        (6, "oracle suites", c6_oracles),
        (7, "determinism", c7_determinism),
        (8, "ppo training gate", c8_ppo),
    ];
    let mut unexpected = Vec::new();
    for (n, name, f) in criteria {
        let v = f();
        println!("criterion {n} {}: {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass && !KNOWN_FAILURES.contains(&n) {
            unexpected.push(n);
        }
    }
    assert!(unexpected.is_empty(), "criteria failed: {unexpected:?}");
}
