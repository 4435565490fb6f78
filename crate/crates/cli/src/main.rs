use std::path::PathBuf;
use std::process::ExitCode;

use advot_cli::scenario::ScheduleName;
use advot_cli::{load_scenario, run_command, Overrides, Subcommand, TraceFormat};
use clap::Parser;
use log::error;

#[derive(Debug, Parser)]
#[command(
    name = "advot",
    version,
    about = "Adversarial regularized transport experiments"
)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleName>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "csv")]
    emit: TraceFormat,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("ADVOT_LOG", "warn")).init();
    // clap's own exit code 2 would collide with "not converged"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let overrides = Overrides {
        lambda: cli.lambda,
        gamma: cli.gamma,
        tol: cli.tol,
        stages: cli.stages,
        tau: cli.tau,
        schedule: cli.schedule,
        seed: cli.seed,
    };
    let result = load_scenario(&cli.config)
        .and_then(|c| overrides.apply(&c))
        .and_then(|c| run_command(cli.command, &c, &cli.out, cli.emit));
    match result {
        Ok(outcome) => {
            if !outcome.converged {
                error!("{:?} did not converge", cli.command);
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("advot: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
