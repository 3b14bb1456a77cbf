//! `tiltshift simulate`: record synthetic experiments for a pattern.

use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use serde_json::json;

use tiltshift_core::model::build_model;
use tiltshift_core::sim::{derive_seed, sample_prior_state, simulate_trajectory};

use crate::formats::{ExperimentRecord, SCHEMA};
use crate::io_util::{load_config, load_pattern, to_pretty_json, write_text};
use crate::{CliResult, CommandOutput};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Pattern JSON produced by `optimize`.
    #[arg(long)]
    pub pattern: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory; one `run_###.json` per experiment.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &SimulateArgs) -> CliResult<CommandOutput> {
    let config = load_config(&args.config)?;
    let model = build_model(&config)?;
    let pattern = load_pattern(&args.pattern)?;
    let tilts = pattern.result.sequence.tilts().to_vec();
    let bounds = pattern.result.sequence.bounds().to_vec();
    let timestamps: Vec<f64> = (0..tilts.len())
        .map(|k| k as f64 * config.sample_time)
        .collect();

    let records: Vec<CliResult<(PathBuf, String)>> = (0..args.runs)
        .into_par_iter()
        .map(|run_index| {
            let truth_seed = derive_seed(args.seed, 2 * run_index as u64);
            let noise_seed = derive_seed(args.seed, 2 * run_index as u64 + 1);
            let truth = sample_prior_state(&model, truth_seed);
            let sim = simulate_trajectory(&model, &tilts, &truth, noise_seed)
                .map_err(crate::CliError::from)?;
            let record = ExperimentRecord {
                schema: SCHEMA,
                config: config.clone(),
                seed: args.seed,
                run_index: run_index as u64,
                timestamps: timestamps.clone(),
                tilts: tilts.clone(),
                bounds: bounds.clone(),
                measurements: sim.measurements.iter().map(|y| [y[0], y[1]]).collect(),
                truth_states: Some(
                    sim.states
                        .iter()
                        .map(|x| x.iter().copied().collect())
                        .collect(),
                ),
            };
            let path = args.out.join(format!("run_{run_index:03}.json"));
            Ok((path, to_pretty_json(&record)?))
        })
        .collect();

    let mut written = Vec::new();
    for record in records {
        let (path, text) = record?;
        write_text(&path, &text)?;
        written.push(path.display().to_string());
    }

    Ok(CommandOutput {
        summary: json!({
            "runs": args.runs,
            "steps": tilts.len(),
            "out": args.out.display().to_string(),
            "files": written,
        }),
        human: format!(
            "{} simulated run(s) of {} steps written under {}",
            args.runs,
            tilts.len(),
            args.out.display()
        ),
    })
}
