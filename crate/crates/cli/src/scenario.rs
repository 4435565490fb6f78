//! Scenario files: TOML in, validated [`GameSpec`] out.

use std::path::Path;

use advot_core::distributed::{Schedule, ScheduleMode};
use advot_core::dynamic::DynamicOptions;
use advot_core::game::GameSpec;
use advot_core::model::{
    AdversaryBounds, AdversaryCostParams, BeliefState, BipartiteNetwork, PerceptionWeights,
};
use advot_core::ot::SolverSettings;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub network: NetworkConfig,
    /// Dense `sources × targets` matrix; entries off the edge set are ignored.
    pub weights: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversaryConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub dynamic: DynamicConfig,
    #[serde(default)]
    pub distributed: DistributedConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    pub capacities: Vec<f64>,
    /// `[source, target]` pairs; fully connected when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(String, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryConfig {
    pub minor_bound: Vec<f64>,
    pub major_bound: Vec<f64>,
    pub punishment: Punishment,
    #[serde(default = "default_beta")]
    pub beta1: f64,
    #[serde(default = "default_beta")]
    pub beta2: f64,
    /// `[P(minor), P(major)]` per target; uniform when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Punishment {
    PerTarget(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub gamma: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub max_rounds: usize,
    pub deviation_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicConfig {
    pub stages: usize,
    pub tau: f64,
    pub abort_on_stage_failure: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    Sync,
    Async,
    Roundrobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistributedConfig {
    pub schedule: ScheduleName,
    pub activation: f64,
    pub seed: u64,
    pub max_ticks: usize,
    pub adversary_period: usize,
}

fn default_beta() -> f64 {
    0.5
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            lambda: s.lambda,
            gamma: s.gamma,
            tol: s.tol,
            max_iter: s.max_iter,
            max_rounds: 500,
            deviation_tol: 1e-4,
        }
    }
}

impl Default for DynamicConfig {
    fn default() -> Self {
        let d = DynamicOptions::default();
        Self {
            stages: d.stages,
            tau: d.tau,
            abort_on_stage_failure: d.abort_on_stage_failure,
        }
    }
}

impl Default for DistributedConfig {
    fn default() -> Self {
        let s = Schedule::random_subset(0.5, 0);
        Self {
            schedule: ScheduleName::Async,
            activation: s.activation,
            seed: s.seed,
            max_ticks: s.max_ticks,
            adversary_period: s.adversary_period,
        }
    }
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, CliError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| parse_error(text, &e))?;
    config.validate()?;
    Ok(config)
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text)
}

fn parse_error(text: &str, err: &toml::de::Error) -> CliError {
    let (line, column) = match err.span() {
        Some(span) => {
            let before = &text[..span.start.min(text.len())];
            let line = before.matches('\n').count() + 1;
            let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
            (line, column)
        }
        None => (1, 1),
    };
    CliError::Parse {
        line,
        column,
        message: err.message().to_string(),
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_len(field: &str, actual: usize, expected: usize, of: &str) -> Result<(), CliError> {
    if actual == expected {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("expected {expected} entries (one per {of}), got {actual}"),
        ))
    }
}

impl ScenarioConfig {
    /// The effective config as TOML; parsing it back yields `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.adversary.is_some() {
            self.game_spec()?;
        } else {
            self.transport()?;
        }
        let solver = &self.solver;
        if solver.max_rounds == 0 {
            return Err(invalid("solver.max_rounds", "must be positive"));
        }
        if !(solver.deviation_tol > 0.0) {
            return Err(invalid("solver.deviation_tol", "must be > 0"));
        }
        if self.dynamic.stages == 0 {
            return Err(invalid("dynamic.stages", "must be positive"));
        }
        if !(self.dynamic.tau >= 0.0 && self.dynamic.tau.is_finite()) {
            return Err(invalid("dynamic.tau", "must be finite and >= 0"));
        }
        self.schedule()
            .validate()
            .map_err(|e| invalid("distributed", e.to_string()))
    }

    pub fn network(&self) -> Result<BipartiteNetwork, CliError> {
        let net = &self.network;
        check_len(
            "network.capacities",
            net.capacities.len(),
            net.sources.len(),
            "source",
        )?;
        let built = match &net.edges {
            Some(edges) => BipartiteNetwork::build(
                net.sources.clone(),
                net.targets.clone(),
                edges,
                net.capacities.clone(),
            ),
            None => BipartiteNetwork::fully_connected(
                net.sources.clone(),
                net.targets.clone(),
                net.capacities.clone(),
            ),
        };
        built.map_err(|e| invalid(network_field(&e), e.to_string()))
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            lambda: self.solver.lambda,
            gamma: self.solver.gamma,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
        }
    }

    pub fn weights(&self, network: &BipartiteNetwork) -> Result<PerceptionWeights, CliError> {
        self.check_dense("weights", &self.weights)?;
        PerceptionWeights::from_matrix(network, &self.weights)
            .map_err(|e| invalid("weights", e.to_string()))
    }

    fn check_dense(&self, field: &str, matrix: &[Vec<f64>]) -> Result<(), CliError> {
        check_len(field, matrix.len(), self.network.sources.len(), "source")?;
        for row in matrix {
            check_len(field, row.len(), self.network.targets.len(), "target")?;
        }
        Ok(())
    }

    /// Network, weights and solver settings only; enough for the
    /// adversary-free solver.
    pub fn transport(&self) -> Result<(BipartiteNetwork, PerceptionWeights), CliError> {
        let network = self.network()?;
        let weights = self.weights(&network)?;
        self.settings()
            .validate()
            .map_err(|e| invalid(&solver_field(&e), e.to_string()))?;
        Ok((network, weights))
    }

    /// The full game; requires the `[adversary]` block.
    pub fn game_spec(&self) -> Result<GameSpec, CliError> {
        let (network, weights) = self.transport()?;
        let Some(adv) = &self.adversary else {
            return Err(CliError::MissingAdversary);
        };
        let targets = network.num_targets();
        check_len(
            "adversary.minor_bound",
            adv.minor_bound.len(),
            targets,
            "target",
        )?;
        check_len(
            "adversary.major_bound",
            adv.major_bound.len(),
            targets,
            "target",
        )?;
        let bounds = AdversaryBounds::new(adv.minor_bound.clone(), adv.major_bound.clone())
            .map_err(|e| invalid("adversary.minor_bound/major_bound", e.to_string()))?;
        let cost = match &adv.punishment {
            Punishment::PerTarget(v) => {
                check_len("adversary.punishment", v.len(), targets, "target")?;
                AdversaryCostParams::per_target(&network, v, adv.beta1, adv.beta2)
            }
            Punishment::Matrix(m) => {
                self.check_dense("adversary.punishment", m)?;
                AdversaryCostParams::from_matrix(&network, m, adv.beta1, adv.beta2)
            }
        }
        .map_err(|e| invalid(&adversary_field(&e), e.to_string()))?;
        let belief = match &adv.prior {
            Some(prior) => {
                check_len("adversary.prior", prior.len(), targets, "target")?;
                BeliefState::new(prior.clone())
                    .map_err(|e| invalid("adversary.prior", e.to_string()))?
            }
            None => BeliefState::uniform(targets),
        };
        GameSpec::new(network, weights, bounds, cost, belief, self.settings())
            .map_err(|e| invalid("scenario", e.to_string()))
    }

    pub fn dynamic_options(&self) -> DynamicOptions {
        DynamicOptions {
            stages: self.dynamic.stages,
            tau: self.dynamic.tau,
            deviation_tol: self.solver.deviation_tol,
            max_rounds: self.solver.max_rounds,
            abort_on_stage_failure: self.dynamic.abort_on_stage_failure,
        }
    }

    pub fn schedule(&self) -> Schedule {
        let d = &self.distributed;
        let mode = match d.schedule {
            ScheduleName::Sync => ScheduleMode::Synchronous,
            ScheduleName::Async => ScheduleMode::RandomSubset,
            ScheduleName::Roundrobin => ScheduleMode::RoundRobin,
        };
        Schedule {
            mode,
            activation: d.activation,
            seed: d.seed,
            max_ticks: d.max_ticks,
            adversary_period: d.adversary_period,
        }
    }
}

fn network_field(err: &advot_core::Error) -> &'static str {
    use advot_core::Error::*;
    match err {
        NonpositiveCapacity { .. } => "network.capacities",
        DuplicateEdge { .. } | DanglingEdge { .. } | IsolatedNode(_) => "network.edges",
        DuplicateNode(_) => "network.sources/targets",
        _ => "network",
    }
}

fn solver_field(err: &advot_core::Error) -> String {
    match err {
        advot_core::Error::InvalidParameter { name, .. } => format!("solver.{name}"),
        _ => "solver".into(),
    }
}

fn adversary_field(err: &advot_core::Error) -> String {
    match err {
        advot_core::Error::InvalidParameter { name, .. } if name.starts_with("beta") => {
            format!("adversary.{name}")
        }
        _ => "adversary.punishment".into(),
    }
}
