//! The static Bayesian game between the dispatcher and a typed adversary.
//!
//! The dispatcher maximizes its expected utility under the belief `μ`,
//! which reduces to regularized transport with the effective weights
//! `m̃_{jq} = m_{jq} + μ_q(1)·ξ_q(1) + 2·μ_q(2)·ξ_q(2)`. Each adversary type
//! minimizes its cost, which separates into one scalar problem per target
//! node `f(ξ) = A ξ^{-β₂} + B ξ` with
//! `A = Σ_{j∈J_q} c_{jq} x_{jq}^{β₁}` and `B = θ Σ_{j∈J_q} x_{jq}`.
//! Equilibria are found by alternating the two best responses.

use crate::error::{Error, Result};
use crate::model::{
    AdversaryBounds, AdversaryCostParams, AdversaryStrategy, BeliefState, BipartiteNetwork,
    OffenderType, PerceptionWeights, TransportPlan, PERTURBATION_FLOOR,
};
use crate::ot::{
    planner_objective, solve_regularized_ot, solve_regularized_ot_from, xlogx, DualPrices,
    SolveReport, SolverSettings,
};

/// Default number of grid points per coordinate in [`deviation_check`].
pub const DEVIATION_GRID: usize = 21;

/// Everything that defines one instance of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    pub network: BipartiteNetwork,
    pub weights: PerceptionWeights,
    pub bounds: AdversaryBounds,
    pub cost: AdversaryCostParams,
    pub belief: BeliefState,
    pub settings: SolverSettings,
}

impl GameSpec {
    pub fn new(
        network: BipartiteNetwork,
        weights: PerceptionWeights,
        bounds: AdversaryBounds,
        cost: AdversaryCostParams,
        belief: BeliefState,
        settings: SolverSettings,
    ) -> Result<Self> {
        network.check_edge_len("weights", weights.values().len())?;
        network.check_edge_len("punishment coefficients", cost.punishment().len())?;
        network.check_target_len("adversary bounds", bounds.len())?;
        network.check_target_len("belief", belief.len())?;
        settings.validate()?;
        Ok(Self {
            network,
            weights,
            bounds,
            cost,
            belief,
            settings,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.settings.lambda
    }

    pub(crate) fn with_belief(&self, belief: BeliefState) -> Self {
        Self {
            belief,
            ..self.clone()
        }
    }
}

/// The scalar per-node adversary objective `f(ξ) = A ξ^{-β₂} + B ξ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeObjective {
    pub a: f64,
    pub b: f64,
    pub beta2: f64,
}

impl NodeObjective {
    /// Aggregates the plan's flow into target `q` for adversary type `ty`.
    pub fn at_node(
        network: &BipartiteNetwork,
        plan: &TransportPlan,
        cost: &AdversaryCostParams,
        target: usize,
        ty: OffenderType,
    ) -> Self {
        let mut a = 0.0;
        let mut inflow = 0.0;
        for &e in network.target_edges(target) {
            let x = plan.get(e);
            a += cost.punishment()[e] * x.powf(cost.beta1());
            inflow += x;
        }
        Self {
            a,
            b: ty.scale() * inflow,
            beta2: cost.beta2(),
        }
    }

    pub fn value(&self, xi: f64) -> f64 {
        self.a * xi.powf(-self.beta2) + self.b * xi
    }

    pub fn derivative(&self, xi: f64) -> f64 {
        -self.beta2 * self.a * xi.powf(-self.beta2 - 1.0) + self.b
    }

    /// Unique stationary point `(β₂ A / B)^{1/(1+β₂)}`, or `None` when there
    /// is no flow into the node and `f` is nonincreasing.
    pub fn stationary_point(&self) -> Option<f64> {
        (self.b > 0.0).then(|| (self.beta2 * self.a / self.b).powf(1.0 / (1.0 + self.beta2)))
    }

    /// Minimizer of `f` over `[lo, hi]`.
    pub fn minimize_on(&self, lo: f64, hi: f64) -> f64 {
        match self.stationary_point() {
            Some(xi) => xi.clamp(lo, hi),
            None => hi,
        }
    }
}

/// `Σ_θ μ_q(θ)·θ·ξ_q(θ)` at one node.
#[inline]
pub(crate) fn perception_shift(belief: [f64; 2], minor: f64, major: f64) -> f64 {
    belief[0] * OffenderType::Minor.scale() * minor
        + belief[1] * OffenderType::Major.scale() * major
}

/// `m̃_{jq} = m_{jq} + Σ_θ μ_q(θ)·θ·ξ_q(θ)`.
pub fn effective_weights(
    network: &BipartiteNetwork,
    weights: &PerceptionWeights,
    strategy: &AdversaryStrategy,
    belief: &BeliefState,
) -> PerceptionWeights {
    let shift: Vec<f64> = (0..network.num_targets())
        .map(|q| {
            perception_shift(
                belief.node(q),
                strategy.get(q, OffenderType::Minor),
                strategy.get(q, OffenderType::Major),
            )
        })
        .collect();
    let values = network
        .edges()
        .iter()
        .zip(weights.values())
        .map(|(edge, &m)| m + shift[edge.target])
        .collect();
    PerceptionWeights::new(network, values).expect("shifted weights keep the edge layout")
}

/// Expected dispatcher utility `Σ m̃ x − λ x log x`; the entropic term does
/// not depend on the type and is counted once per edge.
pub fn dispatcher_expected_utility(
    spec: &GameSpec,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
) -> f64 {
    let weights = effective_weights(&spec.network, &spec.weights, strategy, &spec.belief);
    planner_objective(plan, &weights, spec.lambda())
}

/// Dispatcher utility measured with the unperturbed weights `m`, i.e. the
/// value the plan actually delivers once the perception shift is removed.
pub fn realized_utility(spec: &GameSpec, plan: &TransportPlan) -> f64 {
    planner_objective(plan, &spec.weights, spec.lambda())
}

pub fn dispatcher_best_response(
    spec: &GameSpec,
    strategy: &AdversaryStrategy,
) -> Result<SolveReport> {
    let weights = effective_weights(&spec.network, &spec.weights, strategy, &spec.belief);
    solve_regularized_ot(&spec.network, &weights, &spec.settings)
}

pub(crate) fn dispatcher_best_response_from(
    spec: &GameSpec,
    perceived: &AdversaryStrategy,
    prices: DualPrices,
) -> Result<SolveReport> {
    let weights = effective_weights(&spec.network, &spec.weights, perceived, &spec.belief);
    solve_regularized_ot_from(&spec.network, &weights, &spec.settings, prices)
}

/// Adversary cost for the joint type `profile`:
/// `Σ_edges c_{jq} ξ_q^{-β₂} x^{β₁} + (m_{jq} + θ_q ξ_q) x`.
pub fn adversary_cost(
    spec: &GameSpec,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
    profile: &[OffenderType],
) -> Result<f64> {
    let network = &spec.network;
    network.check_edge_len("plan", plan.len())?;
    network.check_target_len("type profile", profile.len())?;
    for (q, &ty) in profile.iter().enumerate() {
        let value = strategy.get(q, ty);
        if !(value >= PERTURBATION_FLOOR) {
            return Err(Error::PerturbationBelowFloor {
                node: q,
                value,
                floor: PERTURBATION_FLOOR,
            });
        }
    }
    let (beta1, beta2) = (spec.cost.beta1(), spec.cost.beta2());
    Ok(network
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            let ty = profile[edge.target];
            let xi = strategy.get(edge.target, ty);
            let x = plan.get(e);
            spec.cost.punishment()[e] * xi.powf(-beta2) * x.powf(beta1)
                + (spec.weights.get(e) + ty.scale() * xi) * x
        })
        .sum())
}

/// Adversary cost when every node has type `ty`.
pub fn uniform_type_cost(
    spec: &GameSpec,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
    ty: OffenderType,
) -> Result<f64> {
    adversary_cost(spec, plan, strategy, &vec![ty; spec.network.num_targets()])
}

/// Per-node best response of type `ty`: `clip(ξ̂, ε, cap_q(ty))`, or the cap
/// when no flow enters the node.
pub fn adversary_type_response(
    network: &BipartiteNetwork,
    plan: &TransportPlan,
    cost: &AdversaryCostParams,
    bounds: &AdversaryBounds,
    ty: OffenderType,
) -> Vec<f64> {
    (0..network.num_targets())
        .map(|q| {
            NodeObjective::at_node(network, plan, cost, q, ty)
                .minimize_on(PERTURBATION_FLOOR, bounds.cap(q, ty))
        })
        .collect()
}

/// Both type branches of the adversary's best response to `plan`.
pub fn adversary_best_response(spec: &GameSpec, plan: &TransportPlan) -> AdversaryStrategy {
    let respond = |ty| adversary_type_response(&spec.network, plan, &spec.cost, &spec.bounds, ty);
    AdversaryStrategy::from_raw(respond(OffenderType::Minor), respond(OffenderType::Major))
}

/// One row of the alternating best-response trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub plan: Vec<f64>,
    pub minor: Vec<f64>,
    pub major: Vec<f64>,
    pub dispatcher_utility: f64,
    pub cost_minor: f64,
    pub cost_major: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfile {
    pub plan: TransportPlan,
    pub strategy: AdversaryStrategy,
    pub prices: DualPrices,
    pub iterations: usize,
    pub converged: bool,
    /// Largest unilateral improvement found by [`deviation_check`].
    pub deviation_gap: f64,
    pub trace: Vec<RoundRecord>,
}

/// Alternates dispatcher and adversary best responses, starting from the
/// adversary at its caps and the adversary-free plan, until neither moves by
/// more than the solver tolerance; then certifies the profile with
/// [`deviation_check`].
pub fn solve_bayesian_equilibrium(
    spec: &GameSpec,
    deviation_tol: f64,
    max_rounds: usize,
) -> Result<EquilibriumProfile> {
    let free = solve_regularized_ot(&spec.network, &spec.weights, &spec.settings)?;
    alternate(
        spec,
        free.plan,
        free.prices,
        spec.bounds.upper_strategy(),
        deviation_tol,
        max_rounds,
        &StaticResponder,
    )
}

/// The adversary's side of an alternating best-response loop. Static play
/// uses the raw perturbation; staged play composes it with a threshold.
pub(crate) trait Responder {
    /// Value of the action as it enters both players' utilities.
    fn perceived(&self, strategy: &AdversaryStrategy) -> AdversaryStrategy;
    fn respond(&self, spec: &GameSpec, plan: &TransportPlan) -> AdversaryStrategy;
}

struct StaticResponder;

impl Responder for StaticResponder {
    fn perceived(&self, strategy: &AdversaryStrategy) -> AdversaryStrategy {
        strategy.clone()
    }

    fn respond(&self, spec: &GameSpec, plan: &TransportPlan) -> AdversaryStrategy {
        adversary_best_response(spec, plan)
    }
}

pub(crate) fn alternate(
    spec: &GameSpec,
    initial_plan: TransportPlan,
    initial_prices: DualPrices,
    initial_strategy: AdversaryStrategy,
    deviation_tol: f64,
    max_rounds: usize,
    responder: &dyn Responder,
) -> Result<EquilibriumProfile> {
    if max_rounds == 0 {
        return Err(Error::InvalidParameter {
            name: "max_rounds",
            reason: "must be positive".into(),
        });
    }
    let mut plan = initial_plan;
    let mut prices = initial_prices;
    let mut strategy = initial_strategy;
    let mut trace = vec![round_record(spec, 0, &plan, &strategy, responder)];
    let mut settled = false;
    let mut rounds = 0;

    for round in 1..=max_rounds {
        rounds = round;
        let perceived = responder.perceived(&strategy);
        let report = dispatcher_best_response_from(spec, &perceived, prices)?;
        let next_strategy = responder.respond(spec, &report.plan);
        let change = report
            .plan
            .max_abs_diff(&plan)
            .max(next_strategy.max_abs_diff(&strategy));
        plan = report.plan;
        prices = report.prices;
        strategy = next_strategy;
        trace.push(round_record(spec, round, &plan, &strategy, responder));
        if report.converged && change <= spec.settings.tol {
            settled = true;
            break;
        }
    }

    let deviation_gap = deviation_gap(spec, &plan, &strategy, DEVIATION_GRID, responder);
    Ok(EquilibriumProfile {
        plan,
        strategy,
        prices,
        iterations: rounds,
        converged: settled && deviation_gap <= deviation_tol,
        deviation_gap,
        trace,
    })
}

fn round_record(
    spec: &GameSpec,
    round: usize,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
    responder: &dyn Responder,
) -> RoundRecord {
    let perceived = responder.perceived(strategy);
    let cost = |ty| uniform_type_cost(spec, plan, &perceived, ty).unwrap_or(f64::NAN);
    RoundRecord {
        round,
        plan: plan.values().to_vec(),
        minor: strategy.minor().to_vec(),
        major: strategy.major().to_vec(),
        dispatcher_utility: dispatcher_expected_utility(spec, plan, &perceived),
        cost_minor: cost(OffenderType::Minor),
        cost_major: cost(OffenderType::Major),
    }
}

/// Coordinate-wise deviation certificate: the largest improvement either
/// player obtains by moving a single coordinate of its strategy along a grid
/// of `grid` points (dispatcher rates over their feasible range, adversary
/// perturbations over `[ε, cap]`). A value `≤ 0` means no profitable
/// deviation was located.
pub fn deviation_check(
    spec: &GameSpec,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
    grid: usize,
) -> f64 {
    deviation_gap(spec, plan, strategy, grid, &StaticResponder)
}

pub(crate) fn deviation_gap(
    spec: &GameSpec,
    plan: &TransportPlan,
    strategy: &AdversaryStrategy,
    grid: usize,
    responder: &dyn Responder,
) -> f64 {
    let grid = grid.max(2);
    let network = &spec.network;
    let lambda = spec.lambda();
    let perceived = responder.perceived(strategy);
    let weights = effective_weights(network, &spec.weights, &perceived, &spec.belief);
    let mut best = f64::NEG_INFINITY;

    // dispatcher: utility is separable per edge, so only the moved edge's
    // contribution changes
    let row_sums = network.row_sums(plan.values());
    for (e, edge) in network.edges().iter().enumerate() {
        let x = plan.get(e);
        let current = weights.get(e) * x - lambda * xlogx(x);
        let room = (network.capacity(edge.source) - (row_sums[edge.source] - x)).max(0.0);
        for i in 0..grid {
            let y = room * i as f64 / (grid - 1) as f64;
            best = best.max(weights.get(e) * y - lambda * xlogx(y) - current);
        }
    }

    // adversary: cost is separable per node and type
    for ty in OffenderType::ALL {
        let profile = vec![ty; network.num_targets()];
        let Ok(current) = adversary_cost(spec, plan, &perceived, &profile) else {
            continue;
        };
        for q in 0..network.num_targets() {
            let cap = spec.bounds.cap(q, ty);
            for i in 0..grid {
                let value =
                    PERTURBATION_FLOOR + (cap - PERTURBATION_FLOOR) * i as f64 / (grid - 1) as f64;
                let mut moved = strategy.clone();
                moved.set(q, ty, value);
                let moved = responder.perceived(&moved);
                if let Ok(cost) = adversary_cost(spec, plan, &moved, &profile) {
                    best = best.max(current - cost);
                }
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn single_spec(capacity: f64, bound: f64) -> GameSpec {
        let net =
            BipartiteNetwork::fully_connected(vec!["s".into()], vec!["t".into()], vec![capacity])
                .unwrap();
        let w = PerceptionWeights::new(&net, vec![1.0]).unwrap();
        let cost = AdversaryCostParams::new(&net, vec![1.0], 0.5, 0.5).unwrap();
        GameSpec::new(
            net,
            w,
            AdversaryBounds::new(vec![bound], vec![bound]).unwrap(),
            cost,
            BeliefState::uniform(1),
            SolverSettings::default(),
        )
        .unwrap()
    }

    #[test]
    fn effective_weight_examples() {
        let spec = single_spec(10.0, 10.0);
        let s = AdversaryStrategy::from_raw(vec![2.0], vec![4.0]);
        let w = effective_weights(&spec.network, &spec.weights, &s, &spec.belief);
        assert_abs_diff_eq!(w.get(0), 6.0, epsilon = 1e-15);

        let floor = AdversaryStrategy::at_floor(1);
        let w = effective_weights(&spec.network, &spec.weights, &floor, &spec.belief);
        assert_abs_diff_eq!(w.get(0), 1.0 + 1.5e-6, epsilon = 1e-15);

        let sure = BeliefState::new(vec![[1.0, 0.0]]).unwrap();
        let s = AdversaryStrategy::from_raw(vec![3.0], vec![5.0]);
        let w = effective_weights(&spec.network, &spec.weights, &s, &sure);
        assert_abs_diff_eq!(w.get(0), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn dispatcher_utility_examples() {
        let spec = single_spec(10.0, 10.0);
        let s = AdversaryStrategy::from_raw(vec![2.0], vec![4.0]);
        let zero = TransportPlan::zeros(&spec.network);
        assert_eq!(dispatcher_expected_utility(&spec, &zero, &s), 0.0);
        let one = TransportPlan::new(&spec.network, vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            dispatcher_expected_utility(&spec, &one, &s),
            6.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn adversary_cost_examples() {
        let spec = single_spec(10.0, 10.0);
        let s = AdversaryStrategy::from_raw(vec![1.0], vec![1.0]);
        let zero = TransportPlan::zeros(&spec.network);
        let minor = [OffenderType::Minor];
        assert_eq!(adversary_cost(&spec, &zero, &s, &minor).unwrap(), 0.0);
        let one = TransportPlan::new(&spec.network, vec![1.0]).unwrap();
        assert_abs_diff_eq!(
            adversary_cost(&spec, &one, &s, &minor).unwrap(),
            3.0,
            epsilon = 1e-14
        );
        let below = AdversaryStrategy::from_raw(vec![0.0], vec![1.0]);
        assert!(matches!(
            adversary_cost(&spec, &one, &below, &minor),
            Err(Error::PerturbationBelowFloor { .. })
        ));
    }

    #[test]
    fn node_best_response_examples() {
        let spec = single_spec(10.0, 10.0);
        let one = TransportPlan::new(&spec.network, vec![1.0]).unwrap();
        let xi = adversary_type_response(
            &spec.network,
            &one,
            &spec.cost,
            &spec.bounds,
            OffenderType::Minor,
        );
        assert_abs_diff_eq!(xi[0], 0.5f64.powf(2.0 / 3.0), epsilon = 1e-14);

        let tight = AdversaryBounds::new(vec![0.5], vec![0.5]).unwrap();
        let xi =
            adversary_type_response(&spec.network, &one, &spec.cost, &tight, OffenderType::Minor);
        assert_eq!(xi[0], 0.5);

        let zero = TransportPlan::zeros(&spec.network);
        let xi = adversary_type_response(
            &spec.network,
            &zero,
            &spec.cost,
            &spec.bounds,
            OffenderType::Major,
        );
        assert_eq!(xi[0], 10.0);
    }

    #[test]
    fn node_objective_stationarity() {
        let f = NodeObjective {
            a: 2.4,
            b: 3.1,
            beta2: 0.5,
        };
        let xi = f.stationary_point().unwrap();
        assert!(f.derivative(xi).abs() < 1e-12);
        assert!(f.value(xi) < f.value(xi + 1e-3));
        assert!(f.value(xi) < f.value(xi - 1e-3));
    }

    #[test]
    fn pinned_adversary_gives_free_plan() {
        let mut spec = single_spec(10.0, 10.0);
        spec.bounds =
            AdversaryBounds::new(vec![PERTURBATION_FLOOR], vec![PERTURBATION_FLOOR]).unwrap();
        let eq = solve_bayesian_equilibrium(&spec, 1e-4, 500).unwrap();
        let free = solve_regularized_ot(&spec.network, &spec.weights, &spec.settings).unwrap();
        assert!(eq.plan.max_abs_diff(&free.plan) < 1e-4);
        assert!(eq.converged);
    }

    #[test]
    fn zero_rounds_rejected() {
        let spec = single_spec(10.0, 10.0);
        assert!(solve_bayesian_equilibrium(&spec, 1e-4, 0).is_err());
    }
}
