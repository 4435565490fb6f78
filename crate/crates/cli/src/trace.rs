//! Trace files: one header, one row per iteration, round, stage or tick.

use std::fmt::Write as _;
use std::io::Write;

use advot_core::model::BipartiteNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TraceFormat {
    Csv,
    Json,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "jsonl",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    SolveOt,
    StaticEq,
    DynamicSim,
    DistributedSim,
}

/// Column layout for one run kind on one network.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSchema {
    pub index: &'static str,
    pub columns: Vec<String>,
}

/// One row: the integer index plus the schema's float columns in order.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub index: usize,
    pub values: Vec<f64>,
}

impl TraceSchema {
    pub fn for_run(kind: RunKind, network: &BipartiteNetwork) -> Self {
        let sources = network.source_ids();
        let targets = network.target_ids();
        let mut columns: Vec<String> = network
            .edges()
            .iter()
            .map(|e| format!("x_{}_{}", sources[e.source], targets[e.target]))
            .collect();
        let per_target =
            |prefix: &'static str| targets.iter().map(move |t| format!("{prefix}_{t}"));
        let index = match kind {
            RunKind::SolveOt | RunKind::DistributedSim => {
                columns.extend(sources.iter().map(|s| format!("p_{s}")));
                columns.extend(["residual".into(), "objective".into()]);
                if kind == RunKind::SolveOt {
                    "iteration"
                } else {
                    "tick"
                }
            }
            RunKind::StaticEq | RunKind::DynamicSim => {
                columns.extend(per_target("xi_minor"));
                columns.extend(per_target("xi_major"));
                columns.extend(per_target("belief_major"));
                columns.extend([
                    "dispatcher_utility".into(),
                    "cost_minor".into(),
                    "cost_major".into(),
                ]);
                if kind == RunKind::StaticEq {
                    "round"
                } else {
                    "stage"
                }
            }
        };
        Self { index, columns }
    }

    pub fn header(&self) -> Vec<&str> {
        std::iter::once(self.index)
            .chain(self.columns.iter().map(String::as_str))
            .collect()
    }
}

/// Twelve significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else {
        v.to_string()
    }
}

/// Writes `records` under `schema`. Every record must match the schema width.
pub fn emit_trace<W: Write>(
    out: &mut W,
    schema: &TraceSchema,
    records: &[TraceRecord],
    format: TraceFormat,
) -> std::io::Result<()> {
    for r in records {
        if r.values.len() != schema.columns.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!(
                    "record {} has {} values, schema has {}",
                    r.index,
                    r.values.len(),
                    schema.columns.len()
                ),
            ));
        }
    }
    match format {
        TraceFormat::Csv => emit_csv(out, schema, records),
        TraceFormat::Json => emit_json(out, schema, records),
    }
}

fn emit_csv<W: Write>(
    out: &mut W,
    schema: &TraceSchema,
    records: &[TraceRecord],
) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(schema.header())?;
    for r in records {
        let row =
            std::iter::once(r.index.to_string()).chain(r.values.iter().map(|&v| format_float(v)));
        writer.write_record(row)?;
    }
    writer.flush()
}

fn emit_json<W: Write>(
    out: &mut W,
    schema: &TraceSchema,
    records: &[TraceRecord],
) -> std::io::Result<()> {
    for r in records {
        let mut line = format!("{{\"{}\":{}", schema.index, r.index);
        for (name, &v) in schema.columns.iter().zip(&r.values) {
            let value = if v.is_finite() {
                format_float(v)
            } else {
                "null".to_string()
            };
            let key = serde_json::to_string(name).map_err(std::io::Error::other)?;
            let _ = write!(line, ",{key}:{value}");
        }
        line.push_str("}\n");
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}
