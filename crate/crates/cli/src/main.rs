use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dip_cli::commands::{
    cmd_bound, cmd_eval, cmd_gen_data, cmd_grid, cmd_sweep, cmd_train, BoundArgs, EvalArgs,
    GenDataArgs, GridArgs, SweepArgs, TrainArgs,
};
use dip_cli::CliResult;

/// Data interpolating prediction experiments.
#[derive(Debug, Parser)]
#[command(name = "dip", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a two-spirals dataset CSV.
    GenData(GenDataArgs),
    /// Train one model per configured seed.
    Train(TrainArgs),
    /// Score a model on a dataset (JSON to stdout).
    Eval(EvalArgs),
    /// Rademacher bound terms for a dataset (JSON to stdout).
    Bound(BoundArgs),
    /// Train and evaluate over an alpha x S x seed grid.
    Sweep(SweepArgs),
    /// Export a decision grid as CSV and PGM.
    Grid(GridArgs),
}

// Write errors (e.g. a closed pipe) are ignored.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

fn print_json<T: serde::Serialize>(v: &T) {
    out!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => {
            let (path, counts) = cmd_gen_data(&a)?;
            out!("{}", path.display());
            for (c, n) in counts.iter().enumerate() {
                out!("class {c}: {n}");
            }
        }
        Command::Train(a) => {
            for dir in cmd_train(&a)? {
                out!("{}", dir.display());
            }
        }
        Command::Eval(a) => print_json(&cmd_eval(&a)?),
        Command::Bound(a) => print_json(&cmd_bound(&a)?),
        Command::Sweep(a) => {
            let s = cmd_sweep(&a)?;
            out!("{}", s.csv_path.display());
            eprintln!("{} cells run, {} resumed", s.completed, s.skipped);
            for f in &s.failed {
                eprintln!("failed: {f}");
            }
        }
        Command::Grid(a) => {
            let (csv, pgm) = cmd_grid(&a)?;
            out!("{}", csv.display());
            out!("{}", pgm.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
