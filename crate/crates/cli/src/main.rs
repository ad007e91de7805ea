//! `cassi`: batch front end for simulation, reconstruction and evaluation.
//!
//! Every subcommand writes a JSON manifest beside its outputs. Failures
//! print one JSON object on stderr and exit with 2 (bad parameters),
//! 3 (bad data or files) or 4 (denoiser worker trouble).

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde_json::json;

use cassi_core::Error;

use commands::{
    BackprojectArgs, EvaluateArgs, ExportArgs, MakeApertureArgs, MakeCubeArgs, ReconstructArgs, ReplayArgs,
    SimulateArgs,
};

#[derive(Debug, Parser)]
#[command(name = "cassi", version, about = "CASSI simulation and split-Bregman reconstruction")]
struct Cli {
    /// Increase log verbosity (-v warnings and info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate random binary coded apertures.
    MakeAperture(MakeApertureArgs),
    /// Generate a synthetic cube or import a PNG band stack.
    MakeCube(MakeCubeArgs),
    /// Apply the CASSI forward model to a cube.
    Simulate(SimulateArgs),
    /// Write the back-projection H^T y used as the solver's starting point.
    Backproject(BackprojectArgs),
    /// Reconstruct a cube from a measurement.
    Reconstruct(ReconstructArgs),
    /// Compare an estimate with a reference cube.
    Evaluate(EvaluateArgs),
    /// Export band images, region spectra or the explicit sensing matrix.
    Export(ExportArgs),
    /// Rerun the job recorded in a manifest.
    Replay(ReplayArgs),
}

/// Process exit status for an error category.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parameter(_) | Error::Shape(_) | Error::Size(_) => 2,
        Error::Format(_) | Error::Data(_) | Error::Io(_) => 3,
        Error::Session(_) | Error::VersionMismatch { .. } | Error::Timeout(_) => 4,
    }
}

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit_code": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            return report("usage", first.trim_start_matches("error: "), 2);
        }
    };

    let level = match cli.verbose {
        0 => log::LevelFilter::Error,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::MakeAperture(a) => commands::make_aperture(&a, &argv),
        Command::MakeCube(a) => commands::make_cube(&a, &argv),
        Command::Simulate(a) => commands::simulate(&a, &argv),
        Command::Backproject(a) => commands::backproject(&a, &argv),
        Command::Reconstruct(a) => commands::reconstruct(&a, &argv),
        Command::Evaluate(a) => commands::evaluate(&a, &argv),
        Command::Export(a) => commands::export(&a, &argv),
        Command::Replay(a) => commands::replay(&a, &argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            report(e.kind(), &e.to_string(), code)
        }
    }
}
