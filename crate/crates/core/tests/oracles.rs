mod common;

use common::*;

fn check(r: SuiteResult) {
    match r {
        Ok(summary) => println!("{summary}"),
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn n_step_return_matches_brute_force() {
    check(n_step_return_suite(1000));
}

#[test]
fn dijkstra_matches_enumeration() {
    check(dijkstra_suite(200));
}

#[test]
fn swept_collision_matches_supersampling() {
    check(swept_collision_suite(200));
}

#[test]
fn jerk_closed_form_matches_quadrature() {
    check(jerk_suite(100));
}

#[test]
fn gradients_match_finite_differences() {
    check(gradient_suite(10));
}

#[test]
fn nearest_distance_matches_scan() {
    check(nearest_distance_suite(300));
}
