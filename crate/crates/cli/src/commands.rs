//! The four experiment entry points.

use std::fs;
use std::path::{Path, PathBuf};

use advot_core::distributed::run_distributed;
use advot_core::dynamic::run_dynamic_game;
use advot_core::game::{
    dispatcher_expected_utility, realized_utility, solve_bayesian_equilibrium, GameSpec,
};
use advot_core::model::{AdversaryStrategy, BipartiteNetwork, OffenderType, TransportPlan};
use advot_core::ot::{
    planner_objective, solve_regularized_ot, unregularized_solve, IterationRecord,
};
use log::info;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::scenario::{ScenarioConfig, ScheduleName};
use crate::trace::{emit_trace, RunKind, TraceFormat, TraceRecord, TraceSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Subcommand {
    SolveOt,
    StaticEq,
    DynamicSim,
    DistributedSim,
}

/// Command-line values that replace the scenario's own.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub tol: Option<f64>,
    pub stages: Option<usize>,
    pub tau: Option<f64>,
    pub schedule: Option<ScheduleName>,
    pub seed: Option<u64>,
}

impl Overrides {
    /// Applies the overrides and revalidates.
    pub fn apply(&self, config: &ScenarioConfig) -> Result<ScenarioConfig, CliError> {
        let mut c = config.clone();
        if let Some(v) = self.lambda {
            c.solver.lambda = v;
        }
        if let Some(v) = self.gamma {
            c.solver.gamma = v;
        }
        if let Some(v) = self.tol {
            c.solver.tol = v;
        }
        if let Some(v) = self.stages {
            c.dynamic.stages = v;
        }
        if let Some(v) = self.tau {
            c.dynamic.tau = v;
        }
        if let Some(v) = self.schedule {
            c.distributed.schedule = v;
        }
        if let Some(v) = self.seed {
            c.distributed.seed = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.converged {
            0
        } else {
            2
        }
    }
}

struct RunOutput {
    kind: RunKind,
    records: Vec<TraceRecord>,
    report: Value,
    converged: bool,
    extra: Vec<(&'static str, String)>,
}

/// Runs `command` on the effective `config` and writes the trace, the report,
/// the config echo and any extra artifacts into `out_dir`.
pub fn run_command(
    command: Subcommand,
    config: &ScenarioConfig,
    out_dir: &Path,
    format: TraceFormat,
) -> Result<Outcome, CliError> {
    let output = match command {
        Subcommand::SolveOt => solve_ot(config)?,
        Subcommand::StaticEq => static_eq(config)?,
        Subcommand::DynamicSim => dynamic_sim(config)?,
        Subcommand::DistributedSim => distributed_sim(config)?,
    };
    let network = config.network()?;

    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut files = Vec::new();
    let mut write = |name: String, bytes: &[u8]| -> Result<(), CliError> {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        files.push(path);
        Ok(())
    };

    let schema = TraceSchema::for_run(output.kind, &network);
    let mut trace = Vec::new();
    emit_trace(&mut trace, &schema, &output.records, format)
        .map_err(|e| CliError::io(Path::new("trace"), e))?;
    write(format!("trace.{}", format.extension()), &trace)?;
    let report = serde_json::to_string_pretty(&output.report).expect("reports serialize") + "\n";
    write("report.json".into(), report.as_bytes())?;
    write("config.toml".into(), config.echo().as_bytes())?;
    for (name, body) in output.extra {
        write(name.into(), body.as_bytes())?;
    }

    info!(
        "{command:?}: converged={} rows={}",
        output.converged,
        output.records.len()
    );
    Ok(Outcome {
        converged: output.converged,
        files,
    })
}

fn matrix(network: &BipartiteNetwork, plan: &TransportPlan) -> Value {
    json!(plan.to_matrix(network))
}

fn strategy_json(s: &AdversaryStrategy) -> Value {
    json!({ "minor": s.minor(), "major": s.major() })
}

fn iteration_rows(trace: &[IterationRecord]) -> Vec<TraceRecord> {
    trace
        .iter()
        .map(|r| {
            let mut values = r.plan.clone();
            values.extend_from_slice(&r.prices);
            values.extend([r.residual, r.objective]);
            TraceRecord {
                index: r.iteration,
                values,
            }
        })
        .collect()
}

fn belief_major(spec: &GameSpec) -> Vec<f64> {
    (0..spec.belief.len())
        .map(|q| spec.belief.prob(q, OffenderType::Major))
        .collect()
}

fn solve_ot(config: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let (network, weights) = config.transport()?;
    let lambda = config.solver.lambda;
    if lambda == 0.0 {
        let plan = unregularized_solve(&network, &weights)?;
        return Ok(RunOutput {
            kind: RunKind::SolveOt,
            records: Vec::new(),
            report: json!({
                "kind": "solve-ot",
                "lambda": lambda,
                "converged": true,
                "iterations": 0,
                "plan": matrix(&network, &plan),
                "objective": planner_objective(&plan, &weights, 0.0),
            }),
            converged: true,
            extra: Vec::new(),
        });
    }
    let report = solve_regularized_ot(&network, &weights, &config.settings())?;
    Ok(RunOutput {
        kind: RunKind::SolveOt,
        records: iteration_rows(&report.trace),
        report: json!({
            "kind": "solve-ot",
            "lambda": lambda,
            "converged": report.converged,
            "iterations": report.iterations,
            "residual": report.residual,
            "plan": matrix(&network, &report.plan),
            "prices": report.prices.values(),
            "objective": planner_objective(&report.plan, &weights, lambda),
        }),
        converged: report.converged,
        extra: Vec::new(),
    })
}

fn static_eq(config: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let spec = config.game_spec()?;
    let eq =
        solve_bayesian_equilibrium(&spec, config.solver.deviation_tol, config.solver.max_rounds)?;
    let prior = belief_major(&spec);
    let records = eq
        .trace
        .iter()
        .map(|r| {
            let mut values = r.plan.clone();
            values.extend_from_slice(&r.minor);
            values.extend_from_slice(&r.major);
            values.extend_from_slice(&prior);
            values.extend([r.dispatcher_utility, r.cost_minor, r.cost_major]);
            TraceRecord {
                index: r.round,
                values,
            }
        })
        .collect();
    Ok(RunOutput {
        kind: RunKind::StaticEq,
        records,
        report: json!({
            "kind": "static-eq",
            "converged": eq.converged,
            "rounds": eq.iterations,
            "deviation_gap": eq.deviation_gap,
            "plan": matrix(&spec.network, &eq.plan),
            "prices": eq.prices.values(),
            "strategy": strategy_json(&eq.strategy),
            "expected_utility": dispatcher_expected_utility(&spec, &eq.plan, &eq.strategy),
            "realized_utility": realized_utility(&spec, &eq.plan),
        }),
        converged: eq.converged,
        extra: Vec::new(),
    })
}

fn dynamic_sim(config: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let spec = config.game_spec()?;
    let initial = AdversaryStrategy::at_floor(spec.network.num_targets());
    let run = run_dynamic_game(&spec, &initial, &config.dynamic_options())?;
    let records = run
        .records
        .iter()
        .map(|r| {
            let mut values = r.plan.clone();
            values.extend_from_slice(&r.minor);
            values.extend_from_slice(&r.major);
            values.extend_from_slice(&r.belief_major);
            values.extend([r.dispatcher_utility, r.cost_minor, r.cost_major]);
            TraceRecord {
                index: r.stage,
                values,
            }
        })
        .collect();
    let last = run.profiles.last().expect("at least one stage");
    let final_belief: Vec<[f64; 2]> = run.final_belief.nodes().to_vec();
    Ok(RunOutput {
        kind: RunKind::DynamicSim,
        records,
        report: json!({
            "kind": "dynamic-sim",
            "converged": run.converged(),
            "stages": run.records.len(),
            "failed_stages": run.failed_stages,
            "tau": config.dynamic.tau,
            "final_plan": matrix(&spec.network, &last.plan),
            "final_strategy": strategy_json(&last.strategy),
            "final_belief": final_belief,
        }),
        converged: run.converged(),
        extra: Vec::new(),
    })
}

fn distributed_sim(config: &ScenarioConfig) -> Result<RunOutput, CliError> {
    let spec = config.game_spec()?;
    let schedule = config.schedule();
    let run = run_distributed(&spec, &schedule)?;
    let r = &run.report;
    Ok(RunOutput {
        kind: RunKind::DistributedSim,
        records: iteration_rows(&r.trace),
        report: json!({
            "kind": "distributed-sim",
            "converged": r.converged,
            "ticks": r.iterations,
            "residual": r.residual,
            "schedule": {
                "mode": schedule.mode,
                "activation": schedule.activation,
                "seed": schedule.seed,
                "adversary_period": schedule.adversary_period,
            },
            "messages": run.log.len(),
            "plan": matrix(&spec.network, &r.plan),
            "prices": r.prices.values(),
            "strategy": strategy_json(&run.strategy),
        }),
        converged: r.converged,
        extra: vec![("messages.jsonl", run.log.to_jsonl())],
    })
}
