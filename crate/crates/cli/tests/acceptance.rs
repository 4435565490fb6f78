//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion outside `KNOWN_FAILURES` fails, or if a known
//! failure starts passing.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use advot_cli::{load_scenario, run_command, Overrides, ScenarioConfig, Subcommand, TraceFormat};
use advot_core::distributed::{replay, run_distributed, Schedule};
use advot_core::dynamic::{belief_update, run_dynamic_game, threshold_phi, DynamicOptions};
use advot_core::game::{
    adversary_best_response, deviation_check, dispatcher_best_response,
    dispatcher_expected_utility, effective_weights, realized_utility, solve_bayesian_equilibrium,
    GameSpec, NodeObjective, DEVIATION_GRID,
};
use advot_core::model::{
    feasibility_check, AdversaryBounds, AdversaryCostParams, AdversaryStrategy, BeliefState,
    BipartiteNetwork, PerceptionWeights, TransportPlan, PERTURBATION_FLOOR,
};
use advot_core::ot::{
    dual_update, primal_update, solve_regularized_ot, unregularized_solve, DualPrices,
    SolverSettings,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot hold under the model as specified; see the README.
const KNOWN_FAILURES: &[&str] = &["attack-degrades-utility"];

const DEVIATION_TOL: f64 = 1e-4;
const MAX_ROUNDS: usize = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn reference() -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/reference_2x3.toml");
    load_scenario(&path).expect("bundled scenario")
}

// ---- oracles ---------------------------------------------------------------

fn row_objective(w: &[f64], x: &[f64], lambda: f64) -> f64 {
    w.iter()
        .zip(x)
        .map(|(&m, &v)| m * v - if v > 0.0 { lambda * v * v.ln() } else { 0.0 })
        .sum()
}

fn project_capped(x: &[f64], cap: f64, floor: f64) -> Vec<f64> {
    let clipped: Vec<f64> = x.iter().map(|&v| v.max(floor)).collect();
    if clipped.iter().sum::<f64>() <= cap {
        return clipped;
    }
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if x.iter().map(|&v| (v - mid).max(floor)).sum::<f64>() > cap {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x.iter().map(|&v| (v - hi).max(floor)).collect()
}

/// Projected-gradient ascent with backtracking on one source row.
fn oracle_row(w: &[f64], cap: f64, lambda: f64) -> Vec<f64> {
    let mut x = vec![cap / (2.0 * w.len() as f64); w.len()];
    let mut step = 1.0;
    for _ in 0..200_000 {
        let grad: Vec<f64> = w
            .iter()
            .zip(&x)
            .map(|(&m, &v)| m - lambda * (1.0 + v.ln()))
            .collect();
        let f0 = row_objective(w, &x, lambda);
        let mut t = step * 2.0;
        let mut moved = false;
        while t > 1e-18 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(&v, &g)| v + t * g).collect();
            let trial = project_capped(&trial, cap, 1e-14);
            let dist2: f64 = trial.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
            if dist2 > 0.0 && row_objective(w, &trial, lambda) - f0 >= dist2 / (4.0 * t) {
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

fn grid_minimizer(a: f64, b: f64, beta: f64, bound: f64, step: f64) -> f64 {
    let f = |xi: f64| a * xi.powf(-beta) + b * xi;
    let n = ((bound - PERTURBATION_FLOOR) / step).floor() as usize;
    let mut best = (f(bound), bound);
    for i in 0..=n {
        let xi = PERTURBATION_FLOOR + i as f64 * step;
        let v = f(xi);
        if v < best.0 {
            best = (v, xi);
        }
    }
    best.1
}

fn random_two_by_two(rng: &mut impl Rng) -> GameSpec {
    let ids = |p: &str| vec![format!("{p}1"), format!("{p}2")];
    let net = BipartiteNetwork::fully_connected(
        ids("s"),
        ids("t"),
        vec![rng.gen_range(3.0..4.0), rng.gen_range(3.0..4.0)],
    )
    .unwrap();
    let weights =
        PerceptionWeights::new(&net, (0..4).map(|_| rng.gen_range(1.0..5.0)).collect()).unwrap();
    let punishment: Vec<f64> = (0..2).map(|_| rng.gen_range(1.0..3.0)).collect();
    let cost = AdversaryCostParams::per_target(&net, &punishment, 0.5, 0.5).unwrap();
    let lo = (0..2).map(|_| rng.gen_range(4.0..6.0)).collect();
    let hi = (0..2).map(|_| rng.gen_range(8.0..10.0)).collect();
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

// ---- criteria --------------------------------------------------------------

fn ot_correctness() -> Outcome {
    let config = reference();
    let (net, w) = config.transport().unwrap();
    let settings = config.settings();
    let start = Instant::now();
    let report = solve_regularized_ot(&net, &w, &settings).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let mut oracle_err: f64 = 0.0;
    for j in 0..net.num_sources() {
        let range = net.source_edges(j);
        let row = oracle_row(&w.values()[range.clone()], net.capacity(j), settings.lambda);
        for (e, v) in range.zip(row) {
            oracle_err = oracle_err.max((report.plan.get(e) - v).abs());
        }
    }
    let mut kkt: f64 = 0.0;
    for (e, edge) in net.edges().iter().enumerate() {
        let x = report.plan.get(e);
        let g = w.get(e) - settings.lambda * (1.0 + x.ln()) - report.prices.get(edge.source);
        kkt = kkt.max(g.abs());
    }
    let slack = feasibility_check(&report.plan, &net, 1e-6).unwrap();
    for (j, s) in slack.slack.iter().enumerate() {
        kkt = kkt.max((report.prices.get(j) * s).abs()).max((-s).max(0.0));
    }
    let pass = report.converged && oracle_err <= 1e-4 && kkt <= 1e-6 && elapsed < 1.0;
    outcome(
        pass,
        format!(
            "oracle err {oracle_err:.2e} (<=1e-4), KKT {kkt:.2e} (<=1e-6), {elapsed:.3}s (<1s)"
        ),
    )
}

fn smoothing() -> Outcome {
    let config = reference();
    let (net, w) = config.transport().unwrap();
    let sharp = unregularized_solve(&net, &w).unwrap();
    let mut rows_ok = true;
    for j in 0..net.num_sources() {
        let row = &sharp.values()[net.source_edges(j)];
        let nonzero: Vec<f64> = row.iter().copied().filter(|&x| x != 0.0).collect();
        rows_ok &= nonzero == [net.capacity(j)];
    }
    let smooth = solve_regularized_ot(&net, &w, &config.settings()).unwrap();
    let min = smooth
        .plan
        .values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    outcome(
        rows_ok && min > 0.01 && smooth.plan.len() == 6,
        format!(
            "lambda=0 one full nonzero per row: {rows_ok}; lambda=3 min entry {min:.4} (>0.01)"
        ),
    )
}

fn adversary_closed_form() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_grid, mut worst_fd): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let f = NodeObjective {
            a: rng.gen_range(0.1..10.0),
            b: rng.gen_range(0.1..10.0),
            beta2: rng.gen_range(0.1..1.0),
        };
        let bound = rng.gen_range(0.1..3.0);
        let closed = f.minimize_on(PERTURBATION_FLOOR, bound);
        let grid = grid_minimizer(f.a, f.b, f.beta2, bound, 1e-5);
        worst_grid = worst_grid.max((closed - grid).abs());

        let xi = rng.gen_range(0.05..bound.max(0.06));
        let h = 1e-6;
        let fd = (f.value(xi + h) - f.value(xi - h)) / (2.0 * h);
        let scale = f.a * f.beta2 * xi.powf(-f.beta2 - 1.0) + f.b;
        worst_fd = worst_fd.max((f.derivative(xi) - fd).abs() / scale);
    }
    outcome(
        worst_grid <= 1e-4 && worst_fd <= 1e-5,
        format!(
            "1000 problems: grid gap {worst_grid:.2e} (<=1e-4), FD rel err {worst_fd:.2e} (<=1e-5)"
        ),
    )
}

fn equilibrium_certificate() -> Outcome {
    let mut specs = vec![reference().game_spec().unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    specs.extend((0..100).map(|_| random_two_by_two(&mut rng)));
    let (mut failures, mut worst_gap, mut worst_rounds) = (0, 0.0f64, 0);
    for spec in &specs {
        let eq = solve_bayesian_equilibrium(spec, DEVIATION_TOL, MAX_ROUNDS).unwrap();
        let gap = deviation_check(spec, &eq.plan, &eq.strategy, DEVIATION_GRID);
        worst_gap = worst_gap.max(gap);
        worst_rounds = worst_rounds.max(eq.iterations);
        if !eq.converged || eq.iterations > MAX_ROUNDS || gap > DEVIATION_TOL {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!(
            "{} instances, {failures} failed; max rounds {worst_rounds} (<=500), max gap {worst_gap:.2e} (<=1e-4)",
            specs.len()
        ),
    )
}

struct Utilities {
    expected: [f64; 3],
    realized: [f64; 3],
}

fn attack_utilities() -> Utilities {
    let spec = reference().game_spec().unwrap();
    let eq = solve_bayesian_equilibrium(&spec, DEVIATION_TOL, MAX_ROUNDS).unwrap();
    let caps = spec.bounds.upper_strategy();
    let at_caps = dispatcher_best_response(&spec, &caps).unwrap();
    let free = solve_regularized_ot(&spec.network, &spec.weights, &spec.settings).unwrap();
    let floor = AdversaryStrategy::at_floor(spec.network.num_targets());
    Utilities {
        expected: [
            dispatcher_expected_utility(&spec, &free.plan, &floor),
            dispatcher_expected_utility(&spec, &eq.plan, &eq.strategy),
            dispatcher_expected_utility(&spec, &at_caps.plan, &caps),
        ],
        realized: [
            realized_utility(&spec, &free.plan),
            realized_utility(&spec, &eq.plan),
            realized_utility(&spec, &at_caps.plan),
        ],
    }
}

fn attack_degrades_utility(u: &Utilities) -> Outcome {
    let [free, eq, caps] = u.expected;
    outcome(
        free >= eq && free >= caps && eq > caps,
        format!(
            "expected utility: free {free:.4}, equilibrium {eq:.4}, caps {caps:.4}; \
             the perturbation raises perceived weights, so expected utility grows with it"
        ),
    )
}

fn attack_degrades_realized(u: &Utilities) -> Outcome {
    let [free, eq, caps] = u.realized;
    outcome(
        free > eq && eq > caps,
        format!("free {free:.4} > equilibrium {eq:.4} > caps {caps:.4}"),
    )
}

fn dynamic_consistency() -> Outcome {
    let spec = reference().game_spec().unwrap();
    let floor = AdversaryStrategy::at_floor(3);
    let one = DynamicOptions {
        stages: 1,
        tau: 0.0,
        ..DynamicOptions::default()
    };
    let run = run_dynamic_game(&spec, &floor, &one).unwrap();
    let eq = solve_bayesian_equilibrium(&spec, DEVIATION_TOL, MAX_ROUNDS).unwrap();
    let static_gap = run.profiles[0]
        .plan
        .max_abs_diff(&eq.plan)
        .max(run.profiles[0].strategy.max_abs_diff(&eq.strategy));

    let long = DynamicOptions {
        stages: 20,
        ..DynamicOptions::default()
    };
    let run = run_dynamic_game(&spec, &floor, &long).unwrap();
    let mut norm: f64 = 0.0;
    for belief in run
        .stages
        .iter()
        .map(|s| &s.belief)
        .chain([&run.final_belief])
    {
        for [a, b] in belief.nodes() {
            norm = norm.max((a + b - 1.0).abs());
        }
    }

    let bounds = AdversaryBounds::new(vec![10.0], vec![10.0]).unwrap();
    let actions = AdversaryStrategy::new(vec![2.0], vec![6.0], &bounds).unwrap();
    let hand = belief_update(&BeliefState::uniform(1), &actions)
        .unwrap()
        .node(0);

    outcome(
        static_gap <= 1e-6 && norm <= 1e-12 && hand == [0.25, 0.75],
        format!(
            "T=1 vs static {static_gap:.2e} (<=1e-6), T=20 norm err {norm:.1e} (<=1e-12), \
             example {hand:?} (== [0.25, 0.75])"
        ),
    )
}

fn thresholding() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    for _ in 0..10_000 {
        let prev = rng.gen_range(0.0..10.0);
        let tau = rng.gen_range(0.0..3.0);
        let xi = rng.gen_range(0.0..15.0);
        let dx = rng.gen_range(0.0..2.0);
        let (a, b) = (
            threshold_phi(xi, prev, tau),
            threshold_phi(xi + dx, prev, tau),
        );
        let knee = prev + tau;
        let continuity =
            (threshold_phi(knee, prev, tau) - threshold_phi(knee - 1e-13, prev, tau)).abs();
        if b < a || b - a > dx + 1e-12 || a < prev || continuity > 1e-12 {
            violations += 1;
        }
    }
    outcome(
        violations == 0,
        format!("10000 triples, {violations} violations (monotone, 1-Lipschitz, floor, knee)"),
    )
}

fn distributed_equivalence() -> Outcome {
    let spec = reference().game_spec().unwrap();
    let eq = solve_bayesian_equilibrium(&spec, DEVIATION_TOL, MAX_ROUNDS).unwrap();
    let (mut worst_gap, mut worst_time, mut replay_ok, mut all_converged) =
        (0.0f64, 0.0f64, true, true);
    for seed in 1..=10 {
        let start = Instant::now();
        let run = run_distributed(&spec, &Schedule::random_subset(0.5, seed)).unwrap();
        worst_time = worst_time.max(start.elapsed().as_secs_f64());
        all_converged &= run.report.converged;
        worst_gap = worst_gap.max(run.report.plan.max_abs_diff(&eq.plan));
        replay_ok &= replay(&run.log).ok().as_ref() == Some(&run.report);
    }

    // synchronous schedule against a centralized alternation with the same
    // one-tick delays
    let schedule = Schedule::synchronous();
    let run = run_distributed(&spec, &schedule).unwrap();
    replay_ok &= replay(&run.log).ok().as_ref() == Some(&run.report);
    let net = &spec.network;
    let mut weights = effective_weights(
        net,
        &spec.weights,
        &spec.bounds.upper_strategy(),
        &spec.belief,
    );
    let mut pending = None;
    let mut prices = DualPrices::zeros(net);
    let mut last = TransportPlan::zeros(net);
    let mut lockstep = run.report.converged;
    for record in &run.report.trace {
        if let Some(w) = pending.take() {
            weights = w;
        }
        let plan = primal_update(net, &weights, &prices, spec.lambda()).unwrap();
        prices = dual_update(net, &prices, &plan, spec.settings.gamma).unwrap();
        if record.iteration % schedule.adversary_period == 0 {
            let xi = adversary_best_response(&spec, &last);
            pending = Some(effective_weights(net, &spec.weights, &xi, &spec.belief));
        }
        lockstep &= record.plan == plan.values() && record.prices == prices.values();
        last = plan;
    }

    outcome(
        all_converged && worst_gap <= 1e-3 && worst_time < 10.0 && lockstep && replay_ok,
        format!(
            "seeds 1-10: max gap {worst_gap:.2e} (<=1e-3), slowest {worst_time:.2}s (<10s); \
             sync lockstep over {} ticks: {lockstep}; replay bit-identical: {replay_ok}",
            run.report.trace.len()
        ),
    )
}

fn determinism() -> Outcome {
    let config = Overrides {
        seed: Some(5),
        ..Overrides::default()
    }
    .apply(&reference())
    .unwrap();
    let mut identical = true;
    let mut files = 0;
    for command in [
        Subcommand::SolveOt,
        Subcommand::StaticEq,
        Subcommand::DynamicSim,
        Subcommand::DistributedSim,
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run_command(command, &config, a.path(), TraceFormat::Csv).unwrap();
        let rb = run_command(command, &config, b.path(), TraceFormat::Csv).unwrap();
        for (x, y) in ra.files.iter().zip(&rb.files) {
            identical &= fs::read(x).unwrap() == fs::read(y).unwrap();
            files += 1;
        }
    }
    outcome(
        identical,
        format!("4 subcommands, {files} output files byte-identical: {identical}"),
    )
}

fn main() -> ExitCode {
    let utilities = attack_utilities();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("ot-correctness", ot_correctness()),
        ("smoothing", smoothing()),
        ("adversary-closed-form", adversary_closed_form()),
        ("equilibrium-certificate", equilibrium_certificate()),
        (
            "attack-degrades-utility",
            attack_degrades_utility(&utilities),
        ),
        ("dynamic-consistency", dynamic_consistency()),
        ("thresholding", thresholding()),
        ("distributed-equivalence", distributed_equivalence()),
        ("determinism", determinism()),
    ];
    let mut ok = true;
    for (name, result) in &criteria {
        let known = KNOWN_FAILURES.contains(name);
        let tag = match (result.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("{tag} {name}: {}", result.detail);
        ok &= result.pass != known;
    }
    let realized = attack_degrades_realized(&utilities);
    println!(
        "INFO attack-degrades-utility at true weights ({}): {}",
        if realized.pass { "holds" } else { "violated" },
        realized.detail
    );
    ok &= realized.pass;
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
