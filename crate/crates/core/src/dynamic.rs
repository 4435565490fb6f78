//! Multistage play with thresholded adversary actions and per-node Bayesian
//! belief updates.
//!
//! Each stage solves a stage equilibrium in which the adversary's raw action
//! `ξ^t` enters both utilities only through `φ(ξ^t; ξ^{t-1}, τ)`: flat at the
//! previous action until the action exceeds it by `τ`, shifted-linear beyond.
//! After the stage, the belief at every target node is reweighted by the
//! scalar action of each type.

use crate::error::{Error, Result};
use crate::game::{
    alternate, dispatcher_expected_utility, uniform_type_cost, EquilibriumProfile, GameSpec,
    NodeObjective, Responder,
};
use crate::model::{
    AdversaryBounds, AdversaryCostParams, AdversaryStrategy, BeliefState, BipartiteNetwork,
    OffenderType, TransportPlan,
};
use crate::ot::solve_regularized_ot;

/// `φ(ξ_t; ξ_prev, τ)`: `ξ_prev` while `ξ_t < ξ_prev + τ`, `ξ_t − τ` from the
/// knee on.
pub fn threshold_phi(xi: f64, previous: f64, tau: f64) -> f64 {
    if xi < previous + tau {
        previous
    } else {
        xi - tau
    }
}

fn threshold_strategy(
    strategy: &AdversaryStrategy,
    previous: &AdversaryStrategy,
    tau: f64,
) -> AdversaryStrategy {
    let apply = |ty| {
        (0..strategy.len())
            .map(|q| threshold_phi(strategy.get(q, ty), previous.get(q, ty), tau))
            .collect::<Vec<_>>()
    };
    AdversaryStrategy::from_raw(apply(OffenderType::Minor), apply(OffenderType::Major))
}

/// Stage best response of type `ty`. With `z = φ(ξ)` the composed objective
/// is the static `f(z)` over `z ∈ [ξ_prev, max(ξ_prev, cap − τ)]`; the raw
/// action is `z + τ` when `z` leaves the flat region and `ξ_prev` otherwise.
pub fn stage_adversary_best_response(
    network: &BipartiteNetwork,
    plan: &TransportPlan,
    cost: &AdversaryCostParams,
    bounds: &AdversaryBounds,
    tau: f64,
    previous: &AdversaryStrategy,
    ty: OffenderType,
) -> Vec<f64> {
    (0..network.num_targets())
        .map(|q| {
            let prev = previous.get(q, ty);
            let hi = prev.max(bounds.cap(q, ty) - tau);
            let z = NodeObjective::at_node(network, plan, cost, q, ty).minimize_on(prev, hi);
            if z > prev {
                z + tau
            } else {
                prev
            }
        })
        .collect()
}

/// `μ'_q(θ) = μ_q(θ) ξ_q(θ) / Σ_θ' μ_q(θ') ξ_q(θ')` at every target node.
pub fn belief_update(belief: &BeliefState, actions: &AdversaryStrategy) -> Result<BeliefState> {
    let nodes = (0..belief.len())
        .map(|q| {
            let minor = belief.prob(q, OffenderType::Minor) * actions.get(q, OffenderType::Minor);
            let major = belief.prob(q, OffenderType::Major) * actions.get(q, OffenderType::Major);
            let total = minor + major;
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::DegenerateDenominator(q));
            }
            Ok([minor / total, major / total])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BeliefState::from_normalized(nodes))
}

struct StageResponder {
    previous: AdversaryStrategy,
    tau: f64,
}

impl Responder for StageResponder {
    fn perceived(&self, strategy: &AdversaryStrategy) -> AdversaryStrategy {
        threshold_strategy(strategy, &self.previous, self.tau)
    }

    fn respond(&self, spec: &GameSpec, plan: &TransportPlan) -> AdversaryStrategy {
        let respond = |ty| {
            stage_adversary_best_response(
                &spec.network,
                plan,
                &spec.cost,
                &spec.bounds,
                self.tau,
                &self.previous,
                ty,
            )
        };
        AdversaryStrategy::from_raw(respond(OffenderType::Minor), respond(OffenderType::Major))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageState {
    /// 1-based stage index.
    pub stage: usize,
    pub belief: BeliefState,
    pub previous: AdversaryStrategy,
    /// Equilibrium `(x, ξ)` of every earlier stage; length `stage − 1`.
    pub history: Vec<(TransportPlan, AdversaryStrategy)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    pub plan: Vec<f64>,
    pub minor: Vec<f64>,
    pub major: Vec<f64>,
    /// `μ_q^t(2)` in force during the stage.
    pub belief_major: Vec<f64>,
    pub dispatcher_utility: f64,
    pub cost_minor: f64,
    pub cost_major: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicOptions {
    pub stages: usize,
    pub tau: f64,
    pub deviation_tol: f64,
    pub max_rounds: usize,
    /// Stop at the first stage that fails to settle instead of recording it.
    pub abort_on_stage_failure: bool,
}

impl Default for DynamicOptions {
    fn default() -> Self {
        Self {
            stages: 5,
            tau: 0.5,
            deviation_tol: 1e-4,
            max_rounds: 500,
            abort_on_stage_failure: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicRun {
    pub stages: Vec<StageState>,
    pub profiles: Vec<EquilibriumProfile>,
    pub records: Vec<StageRecord>,
    /// Belief after the last stage's update.
    pub final_belief: BeliefState,
    pub failed_stages: Vec<usize>,
}

impl DynamicRun {
    pub fn converged(&self) -> bool {
        self.failed_stages.is_empty()
    }
}

/// Plays `options.stages` stage equilibria in sequence, feeding each stage's
/// actions into the next stage's threshold and belief.
pub fn run_dynamic_game(
    spec: &GameSpec,
    initial: &AdversaryStrategy,
    options: &DynamicOptions,
) -> Result<DynamicRun> {
    if options.stages == 0 {
        return Err(Error::InvalidParameter {
            name: "stages",
            reason: "need at least one stage".into(),
        });
    }
    if !(options.tau >= 0.0 && options.tau.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "tau",
            reason: format!("must be finite and >= 0, got {}", options.tau),
        });
    }
    let initial = AdversaryStrategy::new(
        initial.minor().to_vec(),
        initial.major().to_vec(),
        &spec.bounds,
    )?;

    let free = solve_regularized_ot(&spec.network, &spec.weights, &spec.settings)?;
    let (mut plan, mut prices) = (free.plan, free.prices);
    let mut belief = spec.belief.clone();
    let mut previous = initial;
    let mut history: Vec<(TransportPlan, AdversaryStrategy)> = Vec::new();
    let mut run = DynamicRun {
        stages: Vec::with_capacity(options.stages),
        profiles: Vec::with_capacity(options.stages),
        records: Vec::with_capacity(options.stages),
        final_belief: belief.clone(),
        failed_stages: Vec::new(),
    };

    for stage in 1..=options.stages {
        let stage_spec = spec.with_belief(belief.clone());
        let responder = StageResponder {
            previous: previous.clone(),
            tau: options.tau,
        };
        let profile = alternate(
            &stage_spec,
            plan.clone(),
            prices.clone(),
            spec.bounds.upper_strategy(),
            options.deviation_tol,
            options.max_rounds,
            &responder,
        )?;
        if !profile.converged {
            if options.abort_on_stage_failure {
                return Err(Error::StageNotConverged { stage });
            }
            run.failed_stages.push(stage);
        }

        let perceived = responder.perceived(&profile.strategy);
        let cost =
            |ty| uniform_type_cost(&stage_spec, &profile.plan, &perceived, ty).unwrap_or(f64::NAN);
        run.records.push(StageRecord {
            stage,
            plan: profile.plan.values().to_vec(),
            minor: profile.strategy.minor().to_vec(),
            major: profile.strategy.major().to_vec(),
            belief_major: (0..belief.len())
                .map(|q| belief.prob(q, OffenderType::Major))
                .collect(),
            dispatcher_utility: dispatcher_expected_utility(&stage_spec, &profile.plan, &perceived),
            cost_minor: cost(OffenderType::Minor),
            cost_major: cost(OffenderType::Major),
        });
        run.stages.push(StageState {
            stage,
            belief: belief.clone(),
            previous: previous.clone(),
            history: history.clone(),
        });

        belief = belief_update(&belief, &profile.strategy)?;
        previous = profile.strategy.clone();
        history.push((profile.plan.clone(), profile.strategy.clone()));
        plan = profile.plan.clone();
        prices = profile.prices.clone();
        run.profiles.push(profile);
    }
    run.final_belief = belief;
    Ok(run)
}
