//! Test-only oracles. Nothing here calls into the solver paths it checks.
#![allow(dead_code)]

use advot_core::game::GameSpec;
use advot_core::model::{
    AdversaryBounds, AdversaryCostParams, BeliefState, BipartiteNetwork, PerceptionWeights,
};
use advot_core::ot::SolverSettings;
use rand::Rng;

pub const REFERENCE_WEIGHTS: [[f64; 3]; 2] = [[1.0, 3.0, 5.0], [2.0, 5.0, 1.0]];

pub fn ids(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn reference_network() -> BipartiteNetwork {
    BipartiteNetwork::fully_connected(ids("s", 2), ids("t", 3), vec![4.0, 3.0]).unwrap()
}

pub fn reference_weights(net: &BipartiteNetwork) -> PerceptionWeights {
    let rows: Vec<Vec<f64>> = REFERENCE_WEIGHTS.iter().map(|r| r.to_vec()).collect();
    PerceptionWeights::from_matrix(net, &rows).unwrap()
}

pub fn reference_spec() -> GameSpec {
    let net = reference_network();
    let weights = reference_weights(&net);
    let cost = AdversaryCostParams::per_target(&net, &[1.0, 2.0, 3.0], 0.5, 0.5).unwrap();
    GameSpec::new(
        net,
        weights,
        AdversaryBounds::new(vec![6.0, 4.0, 4.0], vec![8.0, 10.0, 10.0]).unwrap(),
        cost,
        BeliefState::uniform(3),
        SolverSettings::default(),
    )
    .unwrap()
}

pub fn with_belief(spec: &GameSpec, belief: BeliefState) -> GameSpec {
    GameSpec::new(
        spec.network.clone(),
        spec.weights.clone(),
        spec.bounds.clone(),
        spec.cost.clone(),
        belief,
        spec.settings,
    )
    .unwrap()
}

/// Random fully connected 2×2 game with parameters in the ranges of the
/// reference scenario.
pub fn random_two_by_two(rng: &mut impl Rng) -> GameSpec {
    let net = BipartiteNetwork::fully_connected(
        ids("s", 2),
        ids("t", 2),
        vec![rng.gen_range(3.0..4.0), rng.gen_range(3.0..4.0)],
    )
    .unwrap();
    let weights =
        PerceptionWeights::new(&net, (0..4).map(|_| rng.gen_range(1.0..5.0)).collect()).unwrap();
    let punishment: Vec<f64> = (0..2).map(|_| rng.gen_range(1.0..3.0)).collect();
    let cost = AdversaryCostParams::per_target(&net, &punishment, 0.5, 0.5).unwrap();
    let lo: Vec<f64> = (0..2).map(|_| rng.gen_range(4.0..6.0)).collect();
    let hi: Vec<f64> = (0..2).map(|_| rng.gen_range(8.0..10.0)).collect();
    GameSpec::new(
        net,
        weights,
        AdversaryBounds::new(lo, hi).unwrap(),
        cost,
        BeliefState::uniform(2),
        SolverSettings::default(),
    )
    .unwrap()
}

fn row_objective(w: &[f64], x: &[f64], lambda: f64) -> f64 {
    w.iter()
        .zip(x)
        .map(|(&m, &v)| m * v - if v > 0.0 { lambda * v * v.ln() } else { 0.0 })
        .sum()
}

/// Euclidean projection onto `{x ≥ floor, Σx ≤ cap}`.
fn project_capped(x: &[f64], cap: f64, floor: f64) -> Vec<f64> {
    let clipped: Vec<f64> = x.iter().map(|&v| v.max(floor)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = x.iter().map(|&v| (v - mid).max(floor)).sum();
        if s > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x.iter().map(|&v| (v - hi).max(floor)).collect()
}

/// Projected-gradient ascent with backtracking on one source row of
/// `max Σ w x − λ x log x  s.t.  Σ x ≤ cap, x ≥ 0`.
pub fn oracle_row(w: &[f64], cap: f64, lambda: f64) -> Vec<f64> {
    let floor = 1e-14;
    let mut x = vec![cap / (2.0 * w.len() as f64); w.len()];
    let mut step = 1.0;
    for _ in 0..200_000 {
        let grad: Vec<f64> = w
            .iter()
            .zip(&x)
            .map(|(&m, &v)| m - lambda * (1.0 + v.ln()))
            .collect();
        let f0 = row_objective(w, &x, lambda);
        let mut moved = false;
        let mut t = step * 2.0;
        while t > 1e-18 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(&v, &g)| v + t * g).collect();
            let trial = project_capped(&trial, cap, floor);
            let gain: f64 = row_objective(w, &trial, lambda) - f0;
            let dist2: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            if gain >= dist2 / (4.0 * t) && dist2 > 0.0 {
                x = trial;
                step = t;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    x
}

/// Oracle plan for a whole network, row by row in canonical edge order.
pub fn oracle_plan(net: &BipartiteNetwork, weights: &[f64], lambda: f64) -> Vec<f64> {
    let mut plan = Vec::with_capacity(net.num_edges());
    for j in 0..net.num_sources() {
        let range = net.source_edges(j);
        plan.extend(oracle_row(&weights[range], net.capacity(j), lambda));
    }
    plan
}

/// Grid search for `min A ξ^{-β} + B ξ` over `[floor, bound]`.
pub fn grid_minimizer(a: f64, b: f64, beta: f64, floor: f64, bound: f64, step: f64) -> f64 {
    let n = ((bound - floor) / step).floor() as usize;
    let f = |xi: f64| a * xi.powf(-beta) + b * xi;
    let mut best = (f(bound), bound);
    for i in 0..=n {
        let xi = floor + i as f64 * step;
        let v = f(xi);
        if v < best.0 {
            best = (v, xi);
        }
    }
    best.1
}

pub fn assert_close(actual: &[f64], expected: &[f64], tol: f64, what: &str) {
    assert_eq!(actual.len(), expected.len(), "{what}: length");
    for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
        assert!((a - e).abs() <= tol, "{what}[{i}]: {a} vs {e} (tol {tol})");
    }
}
