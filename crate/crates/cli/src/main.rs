use std::path::PathBuf;
use std::process::ExitCode;

use bimatrix_cli::{run_cli, Command};
use clap::Parser;

/// Two-matrix model scenarios: finite-N engine, spectral curve, checks.
#[derive(Parser)]
#[command(name = "bimatrix", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and data files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run_cli(args.command, &args.config, &args.out) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
