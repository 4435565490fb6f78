//! Simulated asynchronous dual pricing.
//!
//! Every source node is an agent holding only its own price, capacity and
//! row of the plan; every target node is an agent holding only its incident
//! weights, its belief and its adversary caps. They talk through messages:
//!
//! * sources send their rate on each outgoing edge to the edge's target and
//!   their price to the monitor after every activation;
//! * every `adversary_period` ticks each target recomputes both type
//!   responses from the rates it has received and sends the shifted weight
//!   `m̃_{jq}` back to every incident source.
//!
//! Messages sent during tick `t` are delivered at the start of tick `t + 1`
//! and appear in the log once, stamped with the tick they were sent.
//! A seeded scheduler decides which sources activate on each tick, so a
//! `(scenario, schedule, seed)` triple fully determines the [`MessageLog`],
//! and [`replay`] rebuilds the final report from the log alone.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{perception_shift, GameSpec, NodeObjective};
use crate::model::{
    max_abs_diff, BipartiteNetwork, OffenderType, TransportPlan, PERTURBATION_FLOOR,
};
use crate::ot::{primal_rate, projected_price, xlogx, DualPrices, IterationRecord, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleMode {
    /// Every source activates on every tick.
    Synchronous,
    /// Each source activates independently with the schedule's probability.
    RandomSubset,
    /// Exactly one source per tick, cycling in source order.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub mode: ScheduleMode,
    pub activation: f64,
    pub seed: u64,
    pub max_ticks: usize,
    /// Ticks between adversary refreshes (the staleness bound).
    pub adversary_period: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::RandomSubset,
            activation: 0.5,
            seed: 0,
            max_ticks: 200_000,
            adversary_period: 10,
        }
    }
}

impl Schedule {
    pub fn synchronous() -> Self {
        Self {
            mode: ScheduleMode::Synchronous,
            activation: 1.0,
            ..Self::default()
        }
    }

    pub fn random_subset(activation: f64, seed: u64) -> Self {
        Self {
            mode: ScheduleMode::RandomSubset,
            activation,
            seed,
            ..Self::default()
        }
    }

    pub fn round_robin() -> Self {
        Self {
            mode: ScheduleMode::RoundRobin,
            ..Self::default()
        }
    }

    /// Dual step actually used by the agents: halved whenever updates can be
    /// stale.
    pub fn step_size(&self, gamma: f64) -> f64 {
        match self.mode {
            ScheduleMode::Synchronous => gamma,
            ScheduleMode::RandomSubset | ScheduleMode::RoundRobin => gamma / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mode == ScheduleMode::RandomSubset
            && !(self.activation > 0.0 && self.activation <= 1.0)
        {
            return Err(Error::InvalidParameter {
                name: "activation",
                reason: format!("must lie in (0, 1], got {}", self.activation),
            });
        }
        if self.max_ticks == 0 || self.adversary_period == 0 {
            return Err(Error::InvalidParameter {
                name: "schedule",
                reason: "max_ticks and adversary_period must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Scheduler,
    Monitor,
    Source(usize),
    Target(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Scheduler => f.write_str("scheduler"),
            Endpoint::Monitor => f.write_str("monitor"),
            Endpoint::Source(j) => write!(f, "S{j}"),
            Endpoint::Target(q) => write!(f, "T{q}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "scheduler" => Ok(Endpoint::Scheduler),
            "monitor" => Ok(Endpoint::Monitor),
            _ => {
                let index = |rest: &str| {
                    rest.parse::<usize>()
                        .map_err(|_| format!("bad endpoint {s}"))
                };
                if let Some(rest) = s.strip_prefix('S') {
                    index(rest).map(Endpoint::Source)
                } else if let Some(rest) = s.strip_prefix('T') {
                    index(rest).map(Endpoint::Target)
                } else {
                    Err(format!("bad endpoint {s}"))
                }
            }
        }
    }
}

impl Serialize for Endpoint {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Endpoint {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    /// `[sources, targets, edges, λ, γ, tol]`
    Start,
    /// `[canonical edge index]`, source to target.
    Edge,
    Activate,
    /// `[x_{jq}]`, source to target.
    Rate,
    /// `[p_j]`, source to monitor.
    Price,
    /// `[m̃_{jq}, ξ_q(1), ξ_q(2)]`, target to source.
    Weight,
    /// `[residual, objective]` at the end of a tick.
    Tick,
    /// `[ticks, residual, converged]`
    Final,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub tick: usize,
    pub sender: Endpoint,
    pub receiver: Endpoint,
    pub kind: MessageKind,
    pub values: Vec<f64>,
}

/// Append-only record of every message exchanged during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MessageLog {
    records: Vec<Message>,
}

impl MessageLog {
    pub fn records(&self) -> &[Message] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, message: Message) {
        self.records.push(message);
    }

    fn extend(&mut self, messages: &[Message]) {
        self.records.extend_from_slice(messages);
    }

    /// One JSON object per line; floats use their shortest round-trip form.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("message serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, line)| !line.trim().is_empty())
            .map(|(i, line)| {
                serde_json::from_str(line)
                    .map_err(|e| Error::CorruptLog(format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<Message>>>()?;
        Ok(Self { records })
    }
}

/// A source node's local view: its own price, rates, capacity and the latest
/// weights received for its edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceAgent {
    id: usize,
    capacity: f64,
    price: f64,
    targets: Vec<usize>,
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl SourceAgent {
    fn new(network: &BipartiteNetwork, id: usize) -> Self {
        let edges = network.source_edges(id);
        Self {
            id,
            capacity: network.capacity(id),
            price: 0.0,
            targets: network.edges()[edges.clone()]
                .iter()
                .map(|e| e.target)
                .collect(),
            weights: vec![0.0; edges.len()],
            rates: vec![0.0; edges.len()],
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn price(&self) -> f64 {
        self.price
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    /// Accepts a weight message from one of this source's own targets.
    pub fn receive(&mut self, message: &Message) -> Result<()> {
        let local = match (message.kind, message.sender, message.receiver) {
            (MessageKind::Weight, Endpoint::Target(q), Endpoint::Source(j)) if j == self.id => {
                self.targets.iter().position(|&t| t == q)
            }
            _ => None,
        };
        match (local, message.values.first()) {
            (Some(k), Some(&w)) => {
                self.weights[k] = w;
                Ok(())
            }
            _ => Err(Error::CorruptLog(format!(
                "source {} cannot accept {:?} from {}",
                self.id, message.kind, message.sender
            ))),
        }
    }

    /// Primal closed form on the agent's own row, then projected dual ascent
    /// on its own capacity.
    pub fn tick(&mut self, gamma: f64, lambda: f64) {
        for (x, &w) in self.rates.iter_mut().zip(&self.weights) {
            *x = primal_rate(w, self.price, lambda);
        }
        let row_sum: f64 = self.rates.iter().sum();
        self.price = projected_price(self.price, row_sum, self.capacity, gamma);
    }

    /// Fixed-point and complementarity violation of the agent's local state.
    fn local_residual(&self, lambda: f64) -> f64 {
        let fixed_point = self
            .rates
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| (x - primal_rate(w, self.price, lambda)).abs())
            .fold(0.0, f64::max);
        let row_sum: f64 = self.rates.iter().sum();
        fixed_point.max(self.price.min(self.capacity - row_sum).abs())
    }
}

/// [`SourceAgent::tick`] on a copy of `agent` with `weights` on its edges.
pub fn agent_tick(agent: &SourceAgent, weights: &[f64], gamma: f64, lambda: f64) -> SourceAgent {
    let mut next = agent.clone();
    next.weights.copy_from_slice(weights);
    next.tick(gamma, lambda);
    next
}

/// A target node: the adversary's two type branches at that node plus the
/// perception feed for its incident edges.
#[derive(Debug, Clone, PartialEq)]
struct TargetAgent {
    id: usize,
    sources: Vec<usize>,
    base_weights: Vec<f64>,
    punishment: Vec<f64>,
    beta1: f64,
    beta2: f64,
    belief: [f64; 2],
    caps: [f64; 2],
    rates: Vec<f64>,
    minor: f64,
    major: f64,
}

impl TargetAgent {
    fn new(spec: &GameSpec, id: usize) -> Self {
        let incident = spec.network.target_edges(id);
        Self {
            id,
            sources: incident
                .iter()
                .map(|&e| spec.network.edges()[e].source)
                .collect(),
            base_weights: incident.iter().map(|&e| spec.weights.get(e)).collect(),
            punishment: incident
                .iter()
                .map(|&e| spec.cost.punishment()[e])
                .collect(),
            beta1: spec.cost.beta1(),
            beta2: spec.cost.beta2(),
            belief: spec.belief.node(id),
            caps: [
                spec.bounds.cap(id, OffenderType::Minor),
                spec.bounds.cap(id, OffenderType::Major),
            ],
            rates: vec![0.0; incident.len()],
            minor: spec.bounds.cap(id, OffenderType::Minor),
            major: spec.bounds.cap(id, OffenderType::Major),
        }
    }

    fn receive(&mut self, message: &Message) -> Result<()> {
        let local = match (message.kind, message.sender) {
            (MessageKind::Rate, Endpoint::Source(j)) => self.sources.iter().position(|&s| s == j),
            _ => None,
        };
        match (local, message.values.first()) {
            (Some(k), Some(&x)) => {
                self.rates[k] = x;
                Ok(())
            }
            _ => Err(Error::CorruptLog(format!(
                "target {} cannot accept {:?} from {}",
                self.id, message.kind, message.sender
            ))),
        }
    }

    fn objective(&self, ty: OffenderType) -> NodeObjective {
        let mut a = 0.0;
        let mut inflow = 0.0;
        for (&x, &c) in self.rates.iter().zip(&self.punishment) {
            a += c * x.powf(self.beta1);
            inflow += x;
        }
        NodeObjective {
            a,
            b: ty.scale() * inflow,
            beta2: self.beta2,
        }
    }

    fn best_response(&self) -> (f64, f64) {
        (
            self.objective(OffenderType::Minor)
                .minimize_on(PERTURBATION_FLOOR, self.caps[0]),
            self.objective(OffenderType::Major)
                .minimize_on(PERTURBATION_FLOOR, self.caps[1]),
        )
    }

    fn respond(&mut self) {
        (self.minor, self.major) = self.best_response();
    }

    fn weight_messages(&self, tick: usize) -> Vec<Message> {
        let shift = perception_shift(self.belief, self.minor, self.major);
        self.sources
            .iter()
            .zip(&self.base_weights)
            .map(|(&j, &m)| Message {
                tick,
                sender: Endpoint::Target(self.id),
                receiver: Endpoint::Source(j),
                kind: MessageKind::Weight,
                values: vec![m + shift, self.minor, self.major],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedRun {
    pub report: SolveReport,
    pub strategy: crate::model::AdversaryStrategy,
    pub log: MessageLog,
}

/// Runs the agent simulation until the global residual drops to the solver
/// tolerance or the schedule's tick budget runs out.
pub fn run_distributed(spec: &GameSpec, schedule: &Schedule) -> Result<DistributedRun> {
    schedule.validate()?;
    let lambda = spec.lambda();
    if !(lambda > 0.0) {
        return Err(Error::ZeroLambda);
    }
    let network = &spec.network;
    let gamma = schedule.step_size(spec.settings.gamma);
    let tol = spec.settings.tol;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut log = MessageLog::default();

    let mut sources: Vec<SourceAgent> = (0..network.num_sources())
        .map(|j| SourceAgent::new(network, j))
        .collect();
    let mut targets: Vec<TargetAgent> = (0..network.num_targets())
        .map(|q| TargetAgent::new(spec, q))
        .collect();

    log.push(Message {
        tick: 0,
        sender: Endpoint::Monitor,
        receiver: Endpoint::Monitor,
        kind: MessageKind::Start,
        values: vec![
            network.num_sources() as f64,
            network.num_targets() as f64,
            network.num_edges() as f64,
            lambda,
            gamma,
            tol,
        ],
    });
    for (e, edge) in network.edges().iter().enumerate() {
        log.push(Message {
            tick: 0,
            sender: Endpoint::Source(edge.source),
            receiver: Endpoint::Target(edge.target),
            kind: MessageKind::Edge,
            values: vec![e as f64],
        });
    }

    // initial perception: adversary at its caps
    let mut pending: Vec<Message> = targets.iter().flat_map(|t| t.weight_messages(0)).collect();
    log.extend(&pending);

    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut ticks = 0;

    for tick in 1..=schedule.max_ticks {
        ticks = tick;
        for message in pending.drain(..) {
            match message.receiver {
                Endpoint::Source(j) => sources[j].receive(&message)?,
                Endpoint::Target(q) => targets[q].receive(&message)?,
                Endpoint::Scheduler | Endpoint::Monitor => {}
            }
        }

        let active: Vec<usize> = match schedule.mode {
            ScheduleMode::Synchronous => (0..sources.len()).collect(),
            ScheduleMode::RandomSubset => (0..sources.len())
                .filter(|_| rng.gen::<f64>() < schedule.activation)
                .collect(),
            ScheduleMode::RoundRobin => vec![(tick - 1) % sources.len()],
        };

        let mut outgoing = Vec::new();
        for j in active {
            log.push(Message {
                tick,
                sender: Endpoint::Scheduler,
                receiver: Endpoint::Source(j),
                kind: MessageKind::Activate,
                values: Vec::new(),
            });
            let agent = &mut sources[j];
            agent.tick(gamma, lambda);
            for (&q, &x) in agent.targets.iter().zip(&agent.rates) {
                outgoing.push(Message {
                    tick,
                    sender: Endpoint::Source(j),
                    receiver: Endpoint::Target(q),
                    kind: MessageKind::Rate,
                    values: vec![x],
                });
            }
            log.push(Message {
                tick,
                sender: Endpoint::Source(j),
                receiver: Endpoint::Monitor,
                kind: MessageKind::Price,
                values: vec![agent.price],
            });
        }

        if tick % schedule.adversary_period == 0 {
            for target in &mut targets {
                target.respond();
                outgoing.extend(target.weight_messages(tick));
            }
        }
        log.extend(&outgoing);
        pending = outgoing;

        let plan = assemble_plan(network, &sources);
        residual = global_residual(spec, &sources, &targets, &plan, lambda);
        let objective = sources
            .iter()
            .flat_map(|a| a.rates.iter().zip(&a.weights))
            .map(|(&x, &w)| w * x - lambda * xlogx(x))
            .sum();
        log.push(Message {
            tick,
            sender: Endpoint::Monitor,
            receiver: Endpoint::Monitor,
            kind: MessageKind::Tick,
            values: vec![residual, objective],
        });
        trace.push(IterationRecord {
            iteration: tick,
            plan: plan.values().to_vec(),
            prices: sources.iter().map(|a| a.price).collect(),
            residual,
            objective,
        });
        if residual <= tol {
            converged = true;
            break;
        }
    }

    log.push(Message {
        tick: ticks,
        sender: Endpoint::Monitor,
        receiver: Endpoint::Monitor,
        kind: MessageKind::Final,
        values: vec![ticks as f64, residual, if converged { 1.0 } else { 0.0 }],
    });

    let report = SolveReport {
        plan: assemble_plan(network, &sources),
        prices: DualPrices::from_raw(sources.iter().map(|a| a.price).collect()),
        iterations: ticks,
        residual,
        converged,
        trace,
    };
    let strategy = crate::model::AdversaryStrategy::from_raw(
        targets.iter().map(|t| t.minor).collect(),
        targets.iter().map(|t| t.major).collect(),
    );
    Ok(DistributedRun {
        report,
        strategy,
        log,
    })
}

fn assemble_plan(network: &BipartiteNetwork, sources: &[SourceAgent]) -> TransportPlan {
    let mut rates = Vec::with_capacity(network.num_edges());
    for agent in sources {
        rates.extend_from_slice(&agent.rates);
    }
    TransportPlan::from_raw(rates)
}

/// Monitor-side convergence measure over the whole simulated system: local
/// fixed-point and complementarity residuals of every source, the distance of
/// every target's action from its best response to the current rates, and the
/// staleness of every source's weights.
fn global_residual(
    spec: &GameSpec,
    sources: &[SourceAgent],
    targets: &[TargetAgent],
    plan: &TransportPlan,
    lambda: f64,
) -> f64 {
    let network = &spec.network;
    let mut residual = sources
        .iter()
        .map(|a| a.local_residual(lambda))
        .fold(0.0, f64::max);
    let mut current = Vec::with_capacity(network.num_edges());
    for target in targets {
        let mut fresh = target.clone();
        for (k, &e) in network.target_edges(target.id).iter().enumerate() {
            fresh.rates[k] = plan.get(e);
        }
        let (minor, major) = fresh.best_response();
        residual = residual
            .max((minor - target.minor).abs())
            .max((major - target.major).abs());
        current.push(perception_shift(target.belief, target.minor, target.major));
    }
    let stale: Vec<f64> = network
        .edges()
        .iter()
        .enumerate()
        .map(|(e, edge)| spec.weights.get(e) + current[edge.target])
        .collect();
    let known: Vec<f64> = sources
        .iter()
        .flat_map(|a| a.weights.iter().copied())
        .collect();
    residual.max(max_abs_diff(&stale, &known))
}

/// Rebuilds the run's [`SolveReport`] from its message log alone.
pub fn replay(log: &MessageLog) -> Result<SolveReport> {
    let corrupt = |msg: String| Error::CorruptLog(msg);
    let records = log.records();
    let start = records
        .first()
        .filter(|m| m.kind == MessageKind::Start && m.values.len() == 6)
        .ok_or_else(|| corrupt("missing start record".into()))?;
    let count = |v: f64, what: &str| {
        if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
            Ok(v as usize)
        } else {
            Err(corrupt(format!("bad {what} count {v}")))
        }
    };
    let n = count(start.values[0], "source")?;
    let m = count(start.values[1], "target")?;
    let edges = count(start.values[2], "edge")?;

    let mut edge_of = std::collections::HashMap::with_capacity(edges);
    let mut rates = vec![0.0; edges];
    let mut prices = vec![0.0; n];
    let mut trace = Vec::new();
    let mut last_tick = 0;
    let mut finished: Option<(usize, f64, bool)> = None;

    for (line, record) in records.iter().enumerate().skip(1) {
        if finished.is_some() {
            return Err(corrupt(format!("record {line} after final record")));
        }
        if record.tick < last_tick {
            return Err(corrupt(format!("record {line} goes back in time")));
        }
        last_tick = record.tick;
        let value = |i: usize| {
            record
                .values
                .get(i)
                .copied()
                .ok_or_else(|| corrupt(format!("record {line} is missing values")))
        };
        match (record.kind, record.sender, record.receiver) {
            (MessageKind::Edge, Endpoint::Source(j), Endpoint::Target(q)) if j < n && q < m => {
                let e = count(value(0)?, "edge index")?;
                if e >= edges || edge_of.insert((j, q), e).is_some() {
                    return Err(corrupt(format!("record {line} has a bad edge")));
                }
            }
            (MessageKind::Rate, Endpoint::Source(j), Endpoint::Target(q)) => {
                let e = edge_of
                    .get(&(j, q))
                    .ok_or_else(|| corrupt(format!("record {line} uses an unknown edge")))?;
                rates[*e] = value(0)?;
            }
            (MessageKind::Price, Endpoint::Source(j), Endpoint::Monitor) if j < n => {
                prices[j] = value(0)?;
            }
            (MessageKind::Tick, Endpoint::Monitor, Endpoint::Monitor) => {
                trace.push(IterationRecord {
                    iteration: record.tick,
                    plan: rates.clone(),
                    prices: prices.clone(),
                    residual: value(0)?,
                    objective: value(1)?,
                });
            }
            (MessageKind::Final, Endpoint::Monitor, Endpoint::Monitor) => {
                finished = Some((count(value(0)?, "tick")?, value(1)?, value(2)? == 1.0));
            }
            (MessageKind::Activate, Endpoint::Scheduler, Endpoint::Source(j)) if j < n => {}
            (MessageKind::Weight, Endpoint::Target(q), Endpoint::Source(j)) if j < n && q < m => {}
            _ => return Err(corrupt(format!("record {line} is malformed"))),
        }
    }

    if edge_of.len() != edges {
        return Err(corrupt("edge table incomplete".into()));
    }
    let (iterations, residual, converged) =
        finished.ok_or_else(|| corrupt("log is truncated: no final record".into()))?;
    if trace.len() != iterations {
        return Err(corrupt(
            "tick records do not match the final tick count".into(),
        ));
    }
    Ok(SolveReport {
        plan: TransportPlan::from_raw(rates),
        prices: DualPrices::from_raw(prices),
        iterations,
        residual,
        converged,
        trace,
    })
}
