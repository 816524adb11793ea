//! `dtn-lqr`: solve, analyse and simulate timer-control scenarios.
//!
//! Exit codes: 0 ok, 1 usage or I/O error, 2 missing scenario file,
//! 3 schema violation, 4 Riccati blow-up, 5 infeasible timer schedule.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use commands::{Command, Options};

#[derive(Debug, Parser)]
#[command(name = "dtn-lqr", version, about = "Optimal timer control for two-hop relay routing")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Scenario file (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory; defaults to the scenario's `outputs.dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep range `lo:hi:step` (c1/c3 for feasibility, c4 for sweep).
    #[arg(long, value_name = "LO:HI:STEP", allow_hyphen_values = true)]
    sweep: Option<String>,
    /// Simulate without timers instead of the optimal schedule.
    #[arg(long)]
    uncontrolled: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Sampling interval of the discrete-time solvers, in seconds.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let opts = Options {
        scenario: cli.scenario,
        out: cli.out,
        sweep: cli.sweep,
        uncontrolled: cli.uncontrolled,
        seed: cli.seed,
        runs: cli.runs,
        delta: cli.delta,
    };
    match commands::run(cli.command, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
