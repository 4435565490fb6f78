//! Domain types shared by every solver: the bipartite source/target network,
//! per-edge weights and plans, the per-target type space, beliefs and the
//! adversary's strategy and cost parameters.
//!
//! Edges are kept in canonical order (row-major by source index, then target
//! index). Every per-edge vector in the crate is laid out in that order, so
//! the edges leaving one source form a contiguous range.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound on every adversary perturbation. Keeps `ξ^{-β₂}` and the
/// belief-update denominator finite.
pub const PERTURBATION_FLOOR: f64 = 1e-6;

/// Tolerance on `μ(1) + μ(2) = 1` accepted when constructing a belief.
const BELIEF_INPUT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteNetwork {
    source_ids: Vec<String>,
    target_ids: Vec<String>,
    edges: Vec<Edge>,
    capacities: Vec<f64>,
    row_offsets: Vec<usize>,
    target_edges: Vec<Vec<usize>>,
}

impl BipartiteNetwork {
    /// Validates the node sets, edges and capacities and returns the network
    /// with its edges in canonical order.
    pub fn build<S: AsRef<str>>(
        source_ids: Vec<String>,
        target_ids: Vec<String>,
        edges: &[(S, S)],
        capacities: Vec<f64>,
    ) -> Result<Self> {
        let source_index = index_ids(&source_ids)?;
        let target_index = index_ids(&target_ids)?;
        let mut indexed = Vec::with_capacity(edges.len());
        for (s, t) in edges {
            let (s, t) = (s.as_ref(), t.as_ref());
            match (source_index.get(s), target_index.get(t)) {
                (Some(&j), Some(&q)) => indexed.push((j, q)),
                _ => {
                    return Err(Error::DanglingEdge {
                        source_id: s.to_string(),
                        target_id: t.to_string(),
                    })
                }
            }
        }
        Self::from_indices(source_ids, target_ids, &indexed, capacities)
    }

    /// Same as [`BipartiteNetwork::build`] with edges given as `(source, target)`
    /// positions in the id lists.
    pub fn from_indices(
        source_ids: Vec<String>,
        target_ids: Vec<String>,
        edges: &[(usize, usize)],
        capacities: Vec<f64>,
    ) -> Result<Self> {
        if source_ids.is_empty() || target_ids.is_empty() || edges.is_empty() {
            return Err(Error::EmptyNetwork);
        }
        index_ids(&source_ids)?;
        index_ids(&target_ids)?;
        if capacities.len() != source_ids.len() {
            return Err(Error::DimensionMismatch {
                what: "capacities",
                expected: source_ids.len(),
                actual: capacities.len(),
            });
        }
        for (id, &c) in source_ids.iter().zip(&capacities) {
            // also rejects NaN
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::NonpositiveCapacity {
                    source_id: id.clone(),
                    value: c,
                });
            }
        }

        let (n, m) = (source_ids.len(), target_ids.len());
        let mut canonical: Vec<Edge> = Vec::with_capacity(edges.len());
        let mut seen = HashSet::with_capacity(edges.len());
        for &(j, q) in edges {
            if j >= n || q >= m {
                return Err(Error::DanglingEdge {
                    source_id: source_ids
                        .get(j)
                        .cloned()
                        .unwrap_or_else(|| format!("#{j}")),
                    target_id: target_ids
                        .get(q)
                        .cloned()
                        .unwrap_or_else(|| format!("#{q}")),
                });
            }
            if !seen.insert((j, q)) {
                return Err(Error::DuplicateEdge {
                    source_id: source_ids[j].clone(),
                    target_id: target_ids[q].clone(),
                });
            }
            canonical.push(Edge {
                source: j,
                target: q,
            });
        }
        canonical.sort_unstable();

        let mut row_offsets = vec![0usize; n + 1];
        let mut target_edges = vec![Vec::new(); m];
        for (e, edge) in canonical.iter().enumerate() {
            row_offsets[edge.source + 1] += 1;
            target_edges[edge.target].push(e);
        }
        for j in 0..n {
            row_offsets[j + 1] += row_offsets[j];
        }
        for j in 0..n {
            if row_offsets[j] == row_offsets[j + 1] {
                return Err(Error::IsolatedNode(source_ids[j].clone()));
            }
        }
        for (q, incident) in target_edges.iter().enumerate() {
            if incident.is_empty() {
                return Err(Error::IsolatedNode(target_ids[q].clone()));
            }
        }

        Ok(Self {
            source_ids,
            target_ids,
            edges: canonical,
            capacities,
            row_offsets,
            target_edges,
        })
    }

    /// Every source connected to every target.
    pub fn fully_connected(
        source_ids: Vec<String>,
        target_ids: Vec<String>,
        capacities: Vec<f64>,
    ) -> Result<Self> {
        let edges: Vec<(usize, usize)> = (0..source_ids.len())
            .flat_map(|j| (0..target_ids.len()).map(move |q| (j, q)))
            .collect();
        Self::from_indices(source_ids, target_ids, &edges, capacities)
    }

    pub fn num_sources(&self) -> usize {
        self.source_ids.len()
    }

    pub fn num_targets(&self) -> usize {
        self.target_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn source_ids(&self) -> &[String] {
        &self.source_ids
    }

    pub fn target_ids(&self) -> &[String] {
        &self.target_ids
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn capacity(&self, source: usize) -> f64 {
        self.capacities[source]
    }

    /// Canonical edge indices leaving `source` (the set `Q_j`).
    pub fn source_edges(&self, source: usize) -> Range<usize> {
        self.row_offsets[source]..self.row_offsets[source + 1]
    }

    /// Canonical edge indices entering `target` (the set `J_q`), ascending.
    pub fn target_edges(&self, target: usize) -> &[usize] {
        &self.target_edges[target]
    }

    pub fn edge_index(&self, source: usize, target: usize) -> Option<usize> {
        let range = self.source_edges(source);
        self.edges[range.clone()]
            .binary_search_by_key(&target, |e| e.target)
            .ok()
            .map(|i| range.start + i)
    }

    /// The 0-1 source/edge incidence matrix `B`.
    pub fn incidence(&self) -> IncidenceMatrix {
        let cols = self.num_edges();
        let mut entries = vec![0u8; self.num_sources() * cols];
        for (e, edge) in self.edges.iter().enumerate() {
            entries[edge.source * cols + e] = 1;
        }
        IncidenceMatrix {
            rows: self.num_sources(),
            cols,
            entries,
        }
    }

    /// Per-source totals `Σ_{q∈Q_j} x_{jq}`.
    pub fn row_sums(&self, per_edge: &[f64]) -> Vec<f64> {
        (0..self.num_sources())
            .map(|j| per_edge[self.source_edges(j)].iter().sum())
            .collect()
    }

    pub(crate) fn check_edge_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.num_edges() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.num_edges(),
                actual: len,
            });
        }
        Ok(())
    }

    pub(crate) fn check_target_len(&self, what: &'static str, len: usize) -> Result<()> {
        if len != self.num_targets() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.num_targets(),
                actual: len,
            });
        }
        Ok(())
    }
}

fn index_ids(ids: &[String]) -> Result<HashMap<&str, usize>> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(Error::DuplicateNode(id.clone()));
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u8>,
}

impl IncidenceMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.entries[row * self.cols + col]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.entries.chunks(self.cols).map(<[u8]>::to_vec).collect()
    }

    /// `B · v` for a per-edge vector `v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.entries
            .chunks(self.cols)
            .map(|row| {
                row.iter()
                    .zip(v)
                    .filter(|(&b, _)| b == 1)
                    .map(|(_, &x)| x)
                    .sum()
            })
            .collect()
    }
}

/// Per-edge perception coefficients `m_{jq}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionWeights(Vec<f64>);

impl PerceptionWeights {
    pub fn new(network: &BipartiteNetwork, values: Vec<f64>) -> Result<Self> {
        network.check_edge_len("weights", values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "weights",
                reason: "entries must be finite".into(),
            });
        }
        Ok(Self(values))
    }

    /// Reads the entries of a dense `N × M` matrix at the network's edges.
    pub fn from_matrix(network: &BipartiteNetwork, matrix: &[Vec<f64>]) -> Result<Self> {
        Self::new(network, gather_dense(network, "weights", matrix)?)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.0[edge]
    }
}

pub(crate) fn gather_dense(
    network: &BipartiteNetwork,
    what: &'static str,
    matrix: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if matrix.len() != network.num_sources() {
        return Err(Error::DimensionMismatch {
            what,
            expected: network.num_sources(),
            actual: matrix.len(),
        });
    }
    if let Some(row) = matrix.iter().find(|r| r.len() != network.num_targets()) {
        return Err(Error::DimensionMismatch {
            what,
            expected: network.num_targets(),
            actual: row.len(),
        });
    }
    Ok(network
        .edges()
        .iter()
        .map(|e| matrix[e.source][e.target])
        .collect())
}

/// Per-edge resource rates `x_{jq}`, the dispatcher's action.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan(Vec<f64>);

impl TransportPlan {
    pub fn new(network: &BipartiteNetwork, values: Vec<f64>) -> Result<Self> {
        network.check_edge_len("plan", values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "plan",
                reason: "entries must be finite".into(),
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(network: &BipartiteNetwork) -> Self {
        Self(vec![0.0; network.num_edges()])
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, edge: usize) -> f64 {
        self.0[edge]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Dense `N × M` view with zeros where there is no edge.
    pub fn to_matrix(&self, network: &BipartiteNetwork) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; network.num_targets()]; network.num_sources()];
        for (edge, &x) in network.edges().iter().zip(&self.0) {
            dense[edge.source][edge.target] = x;
        }
        dense
    }

    pub fn max_abs_diff(&self, other: &TransportPlan) -> f64 {
        max_abs_diff(&self.0, &other.0)
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `c_j − Σ_q x_{jq}` per source.
    pub slack: Vec<f64>,
}

/// Checks `x ≥ −tol` and `B·x ≤ c + tol`.
pub fn feasibility_check(
    plan: &TransportPlan,
    network: &BipartiteNetwork,
    tol: f64,
) -> Result<Feasibility> {
    network.check_edge_len("plan", plan.len())?;
    let slack: Vec<f64> = network
        .row_sums(plan.values())
        .iter()
        .zip(network.capacities())
        .map(|(sum, c)| c - sum)
        .collect();
    let feasible = plan.values().iter().all(|&x| x >= -tol) && slack.iter().all(|&s| s >= -tol);
    Ok(Feasibility { feasible, slack })
}

/// Adversary type at a single target node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OffenderType {
    Minor,
    Major,
}

impl OffenderType {
    pub const ALL: [OffenderType; 2] = [OffenderType::Minor, OffenderType::Major];

    /// The numeric type `θ_q ∈ {1, 2}` as it multiplies the perturbation.
    pub fn scale(self) -> f64 {
        match self {
            OffenderType::Minor => 1.0,
            OffenderType::Major => 2.0,
        }
    }

    fn slot(self) -> usize {
        match self {
            OffenderType::Minor => 0,
            OffenderType::Major => 1,
        }
    }
}

/// The product type space `Θ = ×_q {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypeSpace {
    targets: usize,
}

impl TypeSpace {
    pub fn new(targets: usize) -> Self {
        Self { targets }
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    /// `|Θ| = 2^M`, or `None` when it does not fit in a `u64`.
    pub fn cardinality(&self) -> Option<u64> {
        u32::try_from(self.targets)
            .ok()
            .and_then(|m| 1u64.checked_shl(m))
    }

    /// Enumerates every joint type. Only sensible for small `M`.
    pub fn profiles(&self) -> impl Iterator<Item = Vec<OffenderType>> + '_ {
        let count = self
            .cardinality()
            .expect("type space too large to enumerate");
        (0..count).map(move |bits| {
            (0..self.targets)
                .map(|q| {
                    if bits >> q & 1 == 1 {
                        OffenderType::Major
                    } else {
                        OffenderType::Minor
                    }
                })
                .collect()
        })
    }
}

/// Per-target belief `(μ_q(1), μ_q(2))`. The joint belief is the product.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    nodes: Vec<[f64; 2]>,
}

impl BeliefState {
    pub fn new(nodes: Vec<[f64; 2]>) -> Result<Self> {
        let mut normalized = Vec::with_capacity(nodes.len());
        for (q, [minor, major]) in nodes.into_iter().enumerate() {
            let total = minor + major;
            if !(minor >= 0.0 && major >= 0.0) || (total - 1.0).abs() > BELIEF_INPUT_TOL {
                return Err(Error::InvalidBelief {
                    node: q,
                    minor,
                    major,
                });
            }
            normalized.push([minor / total, major / total]);
        }
        Ok(Self { nodes: normalized })
    }

    pub fn uniform(targets: usize) -> Self {
        Self {
            nodes: vec![[0.5, 0.5]; targets],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn prob(&self, target: usize, ty: OffenderType) -> f64 {
        self.nodes[target][ty.slot()]
    }

    pub fn node(&self, target: usize) -> [f64; 2] {
        self.nodes[target]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// `μ(θ) = Π_q μ_q(θ_q)`.
    pub fn joint(&self, profile: &[OffenderType]) -> f64 {
        profile
            .iter()
            .enumerate()
            .map(|(q, &ty)| self.prob(q, ty))
            .product()
    }

    pub(crate) fn from_normalized(nodes: Vec<[f64; 2]>) -> Self {
        Self { nodes }
    }
}

/// Per-target caps `n̲_q` (minor type) and `n̄_q` (major type).
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryBounds {
    minor: Vec<f64>,
    major: Vec<f64>,
}

impl AdversaryBounds {
    pub fn new(minor: Vec<f64>, major: Vec<f64>) -> Result<Self> {
        if minor.len() != major.len() {
            return Err(Error::DimensionMismatch {
                what: "adversary bounds",
                expected: minor.len(),
                actual: major.len(),
            });
        }
        for (&lo, &hi) in minor.iter().zip(&major) {
            if !(lo.is_finite() && hi.is_finite() && lo >= PERTURBATION_FLOOR && lo <= hi) {
                return Err(Error::InvalidParameter {
                    name: "adversary bounds",
                    reason: format!(
                        "need {PERTURBATION_FLOOR} <= minor <= major, got ({lo}, {hi})"
                    ),
                });
            }
        }
        Ok(Self { minor, major })
    }

    pub fn len(&self) -> usize {
        self.minor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minor.is_empty()
    }

    pub fn cap(&self, target: usize, ty: OffenderType) -> f64 {
        match ty {
            OffenderType::Minor => self.minor[target],
            OffenderType::Major => self.major[target],
        }
    }

    pub fn minor(&self) -> &[f64] {
        &self.minor
    }

    pub fn major(&self) -> &[f64] {
        &self.major
    }

    /// The strategy sitting at every cap.
    pub fn upper_strategy(&self) -> AdversaryStrategy {
        AdversaryStrategy {
            minor: self.minor.clone(),
            major: self.major.clone(),
        }
    }
}

/// Per-target, per-type perturbation `ξ_q(θ_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryStrategy {
    minor: Vec<f64>,
    major: Vec<f64>,
}

impl AdversaryStrategy {
    /// Builds a strategy and checks `ε ≤ ξ ≤ cap` for both types.
    pub fn new(minor: Vec<f64>, major: Vec<f64>, bounds: &AdversaryBounds) -> Result<Self> {
        if minor.len() != bounds.len() || major.len() != bounds.len() {
            return Err(Error::DimensionMismatch {
                what: "adversary strategy",
                expected: bounds.len(),
                actual: minor.len().min(major.len()),
            });
        }
        let strategy = Self { minor, major };
        for q in 0..bounds.len() {
            for ty in OffenderType::ALL {
                let value = strategy.get(q, ty);
                if !(value >= PERTURBATION_FLOOR) {
                    return Err(Error::PerturbationBelowFloor {
                        node: q,
                        value,
                        floor: PERTURBATION_FLOOR,
                    });
                }
                if value > bounds.cap(q, ty) {
                    return Err(Error::InvalidParameter {
                        name: "adversary strategy",
                        reason: format!("value {value} at target {q} exceeds its cap"),
                    });
                }
            }
        }
        Ok(strategy)
    }

    /// Every perturbation at the floor `ε`.
    pub fn at_floor(targets: usize) -> Self {
        Self {
            minor: vec![PERTURBATION_FLOOR; targets],
            major: vec![PERTURBATION_FLOOR; targets],
        }
    }

    pub(crate) fn from_raw(minor: Vec<f64>, major: Vec<f64>) -> Self {
        Self { minor, major }
    }

    pub fn len(&self) -> usize {
        self.minor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minor.is_empty()
    }

    pub fn get(&self, target: usize, ty: OffenderType) -> f64 {
        match ty {
            OffenderType::Minor => self.minor[target],
            OffenderType::Major => self.major[target],
        }
    }

    pub fn set(&mut self, target: usize, ty: OffenderType, value: f64) {
        match ty {
            OffenderType::Minor => self.minor[target] = value,
            OffenderType::Major => self.major[target] = value,
        }
    }

    pub fn minor(&self) -> &[f64] {
        &self.minor
    }

    pub fn major(&self) -> &[f64] {
        &self.major
    }

    pub fn max_abs_diff(&self, other: &AdversaryStrategy) -> f64 {
        max_abs_diff(&self.minor, &other.minor).max(max_abs_diff(&self.major, &other.major))
    }
}

/// Punishment coefficients per edge and the exponents `β₁` (on the rate)
/// and `β₂` (on the perturbation).
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryCostParams {
    punishment: Vec<f64>,
    beta1: f64,
    beta2: f64,
}

impl AdversaryCostParams {
    pub fn new(
        network: &BipartiteNetwork,
        punishment: Vec<f64>,
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        network.check_edge_len("punishment coefficients", punishment.len())?;
        if punishment.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidParameter {
                name: "punishment coefficients",
                reason: "must be positive and finite".into(),
            });
        }
        for (name, beta) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must lie in [0, 1], got {beta}"),
                });
            }
        }
        Ok(Self {
            punishment,
            beta1,
            beta2,
        })
    }

    /// Same coefficient on every edge entering a target.
    pub fn per_target(
        network: &BipartiteNetwork,
        per_target: &[f64],
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        network.check_target_len("punishment coefficients", per_target.len())?;
        let punishment = network
            .edges()
            .iter()
            .map(|e| per_target[e.target])
            .collect();
        Self::new(network, punishment, beta1, beta2)
    }

    pub fn from_matrix(
        network: &BipartiteNetwork,
        matrix: &[Vec<f64>],
        beta1: f64,
        beta2: f64,
    ) -> Result<Self> {
        let punishment = gather_dense(network, "punishment coefficients", matrix)?;
        Self::new(network, punishment, beta1, beta2)
    }

    pub fn punishment(&self) -> &[f64] {
        &self.punishment
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }
}
