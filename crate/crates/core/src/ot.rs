//! Adversary-free entropic-regularized transport.
//!
//! The dispatcher maximizes `Σ m x − λ x log x` subject to `B x ≤ c`,
//! `x ≥ 0`. For `λ > 0` the Lagrangian is separable per edge and the primal
//! maximizer has the closed form `x = exp((m − p)/λ − 1)`; the capacity
//! prices `p` follow projected dual ascent `p ← [p + γ(Σ_q x − c)]₊`.
//! The `λ = 0` problem is a linear program whose vertex solution puts each
//! source's whole capacity on its heaviest edge.

use crate::error::{Error, Result};
use crate::model::{BipartiteNetwork, PerceptionWeights, TransportPlan};

/// Shadow prices of the source capacities, one per source, always `≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPrices(Vec<f64>);

impl DualPrices {
    pub fn zeros(network: &BipartiteNetwork) -> Self {
        Self(vec![0.0; network.num_sources()])
    }

    pub fn new(network: &BipartiteNetwork, values: Vec<f64>) -> Result<Self> {
        if values.len() != network.num_sources() {
            return Err(Error::DimensionMismatch {
                what: "prices",
                expected: network.num_sources(),
                actual: values.len(),
            });
        }
        if values.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "prices",
                reason: "must be nonnegative and finite".into(),
            });
        }
        Ok(Self(values))
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, source: usize) -> f64 {
        self.0[source]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Weight of the entropic term.
    pub lambda: f64,
    /// Dual step size.
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            lambda: 3.0,
            gamma: 0.05,
            tol: 1e-8,
            max_iter: 50_000,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: format!("must be finite and >= 0, got {}", self.lambda),
            });
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                reason: format!("must be finite and > 0, got {}", self.gamma),
            });
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol",
                reason: format!("must be > 0, got {}", self.tol),
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub plan: Vec<f64>,
    pub prices: Vec<f64>,
    pub residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub plan: TransportPlan,
    pub prices: DualPrices,
    pub iterations: usize,
    /// Largest complementary-slackness, feasibility or fixed-point violation
    /// at the last iterate.
    pub residual: f64,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
}

/// `x_{jq} = exp((m_{jq} − p_j)/λ − 1)` on every edge.
pub fn primal_update(
    network: &BipartiteNetwork,
    weights: &PerceptionWeights,
    prices: &DualPrices,
    lambda: f64,
) -> Result<TransportPlan> {
    if !(lambda > 0.0) {
        return Err(Error::ZeroLambda);
    }
    network.check_edge_len("weights", weights.values().len())?;
    let mut rates = Vec::with_capacity(network.num_edges());
    for j in 0..network.num_sources() {
        let p = prices.get(j);
        for e in network.source_edges(j) {
            rates.push(primal_rate(weights.get(e), p, lambda));
        }
    }
    if rates.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            reason: format!("exponential update overflowed at lambda = {lambda}"),
        });
    }
    Ok(TransportPlan::from_raw(rates))
}

#[inline]
pub(crate) fn primal_rate(weight: f64, price: f64, lambda: f64) -> f64 {
    ((weight - price) / lambda - 1.0).exp()
}

#[inline]
pub(crate) fn projected_price(price: f64, row_sum: f64, capacity: f64, gamma: f64) -> f64 {
    (price + gamma * (row_sum - capacity)).max(0.0)
}

/// `p_j ← max(0, p_j + γ(Σ_{q∈Q_j} x_{jq} − c_j))`.
pub fn dual_update(
    network: &BipartiteNetwork,
    prices: &DualPrices,
    plan: &TransportPlan,
    gamma: f64,
) -> Result<DualPrices> {
    network.check_edge_len("plan", plan.len())?;
    if prices.values().len() != network.num_sources() {
        return Err(Error::DimensionMismatch {
            what: "prices",
            expected: network.num_sources(),
            actual: prices.values().len(),
        });
    }
    let updated = network
        .row_sums(plan.values())
        .into_iter()
        .enumerate()
        .map(|(j, sum)| projected_price(prices.get(j), sum, network.capacity(j), gamma))
        .collect();
    Ok(DualPrices(updated))
}

/// `max_j |min(p_j, c_j − Σ_q x_{jq})|`: zero exactly when the plan is
/// feasible and every positive price sits on a tight capacity.
pub fn complementarity_residual(
    network: &BipartiteNetwork,
    plan: &TransportPlan,
    prices: &DualPrices,
) -> f64 {
    network
        .row_sums(plan.values())
        .iter()
        .enumerate()
        .map(|(j, sum)| prices.get(j).min(network.capacity(j) - sum).abs())
        .fold(0.0, f64::max)
}

/// Regularized transport from zero prices.
pub fn solve_regularized_ot(
    network: &BipartiteNetwork,
    weights: &PerceptionWeights,
    settings: &SolverSettings,
) -> Result<SolveReport> {
    solve_regularized_ot_from(network, weights, settings, DualPrices::zeros(network))
}

/// Regularized transport warm-started from `prices`.
pub fn solve_regularized_ot_from(
    network: &BipartiteNetwork,
    weights: &PerceptionWeights,
    settings: &SolverSettings,
    prices: DualPrices,
) -> Result<SolveReport> {
    settings.validate()?;
    if settings.lambda == 0.0 {
        return Err(Error::ZeroLambda);
    }
    let lambda = settings.lambda;
    let mut prices = prices;
    let mut previous = primal_update(network, weights, &prices, lambda)?;
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;

    for iteration in 1..=settings.max_iter {
        let plan = primal_update(network, weights, &prices, lambda)?;
        prices = dual_update(network, &prices, &plan, settings.gamma)?;
        let change = plan.max_abs_diff(&previous);
        residual = complementarity_residual(network, &plan, &prices).max(change);
        trace.push(IterationRecord {
            iteration,
            plan: plan.values().to_vec(),
            prices: prices.values().to_vec(),
            residual,
            objective: planner_objective(&plan, weights, lambda),
        });
        previous = plan;
        if residual <= settings.tol {
            return Ok(SolveReport {
                plan: previous,
                prices,
                iterations: iteration,
                residual,
                converged: true,
                trace,
            });
        }
    }

    Ok(SolveReport {
        plan: previous,
        prices,
        iterations: settings.max_iter,
        residual,
        converged: false,
        trace,
    })
}

/// The `λ = 0` baseline: each source sends its full capacity along its
/// heaviest edge (first in canonical order on ties) when that weight is
/// positive, and nothing otherwise.
pub fn unregularized_solve(
    network: &BipartiteNetwork,
    weights: &PerceptionWeights,
) -> Result<TransportPlan> {
    network.check_edge_len("weights", weights.values().len())?;
    let mut rates = vec![0.0; network.num_edges()];
    for j in 0..network.num_sources() {
        let mut best: Option<usize> = None;
        for e in network.source_edges(j) {
            if best.is_none_or(|b| weights.get(e) > weights.get(b)) {
                best = Some(e);
            }
        }
        if let Some(e) = best.filter(|&e| weights.get(e) > 0.0) {
            rates[e] = network.capacity(j);
        }
    }
    Ok(TransportPlan::from_raw(rates))
}

/// `x log x` extended continuously with `0 log 0 = 0`.
#[inline]
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `Σ_edges m x − λ x log x`.
pub fn planner_objective(plan: &TransportPlan, weights: &PerceptionWeights, lambda: f64) -> f64 {
    plan.values()
        .iter()
        .zip(weights.values())
        .map(|(&x, &m)| m * x - lambda * xlogx(x))
        .sum()
}
