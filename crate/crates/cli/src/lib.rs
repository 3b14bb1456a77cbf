//! Command-line harness wiring the estimation library to files on disk.
//!
//! The subcommands mirror the adaptive alignment workflow end to end, with
//! the simulator standing in for the microscope: calibrate the measurement
//! noise from recorded runs (`emfit`), design a tilt pattern (`optimize`),
//! record simulated experiments (`simulate`), estimate aberrations from a
//! record (`estimate`), compare predicted against realized accuracy over
//! many runs (`evaluate`), and drive the closed correction loop
//! (`correct`).
//!
//! Exit codes: 0 on success, 2 for invalid inputs or files, 1 for runtime
//! failures. All randomness in a command derives from its single `--seed`
//! through counter-based sub-streams, so identical invocations produce
//! byte-identical outputs.

pub mod commands;
pub mod formats;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, unreadable files, malformed documents: exit code 2.
    Validation(String),
    /// Failures while computing or writing results: exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<tiltshift_core::Error> for CliError {
    fn from(e: tiltshift_core::Error) -> Self {
        match e {
            tiltshift_core::Error::InvalidArgument(m) => CliError::Validation(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "tiltshift",
    version,
    about = "Tilt-based aberration estimation: pattern design, simulation, filtering, and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Print a machine-readable JSON summary to standard output.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Design a tilt pattern (optimized or baseline) and write it to disk.
    Optimize(commands::optimize::OptimizeArgs),
    /// Simulate experiments for a pattern, recording ground truth.
    Simulate(commands::simulate::SimulateArgs),
    /// Run the Kalman filter (and optionally the smoother) on a record.
    Estimate(commands::estimate::EstimateArgs),
    /// Fit the measurement-noise covariance to recorded runs with EM.
    Emfit(commands::emfit::EmfitArgs),
    /// Monte-Carlo comparison of predicted and realized accuracy.
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Closed-loop correction rounds against the simulator.
    Correct(commands::correct::CorrectArgs),
}

/// What a command hands back: a machine-readable summary and a short
/// human-readable account of what was done.
pub struct CommandOutput {
    pub summary: serde_json::Value,
    pub human: String,
}

/// Runs a parsed invocation.
pub fn run(cli: &Cli) -> CliResult<CommandOutput> {
    match &cli.command {
        Command::Optimize(args) => commands::optimize::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Estimate(args) => commands::estimate::run(args),
        Command::Emfit(args) => commands::emfit::run(args),
        Command::Evaluate(args) => commands::evaluate::run(args),
        Command::Correct(args) => commands::correct::run(args),
    }
}

pub(crate) mod io_util {
    use super::{CliError, CliResult};
    use std::path::Path;

    pub fn read_text(path: &Path) -> CliResult<String> {
        std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
    }

    pub fn write_text(path: &Path, contents: &str) -> CliResult<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| {
                    CliError::Runtime(format!("cannot create {}: {e}", parent.display()))
                })?;
            }
        }
        std::fs::write(path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load_config(path: &Path) -> CliResult<tiltshift_core::model::ModelConfig> {
        let text = read_text(path)?;
        tiltshift_core::model::ModelConfig::from_json(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    pub fn load_pattern(path: &Path) -> CliResult<crate::formats::PatternDoc> {
        let text = read_text(path)?;
        let doc: crate::formats::PatternDoc = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        if doc.schema != crate::formats::SCHEMA {
            return Err(CliError::Validation(format!(
                "{}: unsupported pattern schema {}",
                path.display(),
                doc.schema
            )));
        }
        Ok(doc)
    }

    pub fn load_experiment(path: &Path) -> CliResult<crate::formats::ExperimentRecord> {
        let text = read_text(path)?;
        let record: crate::formats::ExperimentRecord = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        record
            .validate()
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Ok(record)
    }

    pub fn to_pretty_json<T: serde::Serialize>(value: &T) -> CliResult<String> {
        serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))
    }
}
