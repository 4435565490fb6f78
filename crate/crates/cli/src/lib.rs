//! Scenario parsing and experiment orchestration for `advot`.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod error;
pub mod scenario;
pub mod trace;

pub use commands::{run_command, Outcome, Overrides, Subcommand};
pub use error::CliError;
pub use scenario::{load_scenario, parse_scenario, ScenarioConfig};
pub use trace::{emit_trace, TraceFormat, TraceRecord, TraceSchema};
