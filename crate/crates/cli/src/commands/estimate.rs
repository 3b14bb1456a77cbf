//! `tiltshift estimate`: filter (and optionally smooth) a recorded
//! experiment, exporting the trajectory as CSV and a summary as JSON.

use std::path::PathBuf;

use clap::Args;
use nalgebra::Vector2;
use serde_json::json;

use tiltshift_core::estimate::{
    innovation_log_likelihood, rts_smooth, run_filter, write_trajectory_csv,
};
use tiltshift_core::model::build_model;

use crate::formats::{EstimateSummary, StateEstimate, SCHEMA};
use crate::io_util::{load_config, load_experiment, to_pretty_json, write_text};
use crate::{CliResult, CommandOutput};

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Experiment record JSON produced by `simulate`.
    #[arg(long)]
    pub experiment: PathBuf,
    /// Also run the fixed-interval smoother.
    #[arg(long)]
    pub smooth: bool,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EstimateArgs) -> CliResult<CommandOutput> {
    let config = load_config(&args.config)?;
    let model = build_model(&config)?;
    let record = load_experiment(&args.experiment)?;
    let measurements: Vec<Vector2<f64>> = record
        .measurements
        .iter()
        .map(|y| Vector2::new(y[0], y[1]))
        .collect();

    let filtered = run_filter(&model, &record.tilts, &measurements)?;
    let smoothed = if args.smooth {
        Some(rts_smooth(&model, &filtered)?)
    } else {
        None
    };
    let log_likelihood = innovation_log_likelihood(&model, &record.tilts, &measurements)?;

    let mut csv = Vec::new();
    write_trajectory_csv(
        &model,
        &record.tilts,
        &measurements,
        &filtered,
        smoothed.as_ref(),
        &mut csv,
    )?;
    let csv_path = args.out.with_extension("csv");
    write_text(&csv_path, &String::from_utf8_lossy(&csv))?;

    let names = model.layout().slot_names();
    let last = filtered.final_posterior();
    let final_estimates: Vec<StateEstimate> = names
        .iter()
        .enumerate()
        .map(|(j, slot)| {
            let scale = model.scales()[j];
            let std_norm = last.cov[(j, j)].max(0.0).sqrt();
            StateEstimate {
                slot: slot.clone(),
                mean_normalized: last.mean[j],
                std_normalized: std_norm,
                mean_physical: last.mean[j] * scale,
                std_physical: std_norm * scale,
            }
        })
        .collect();
    let summary = EstimateSummary {
        schema: SCHEMA,
        n_steps: record.tilts.len(),
        log_likelihood,
        final_estimates,
    };
    let json_path = args.out.with_extension("json");
    write_text(&json_path, &to_pretty_json(&summary)?)?;

    Ok(CommandOutput {
        summary: json!({
            "steps": summary.n_steps,
            "log_likelihood": summary.log_likelihood,
            "csv": csv_path.display().to_string(),
            "json": json_path.display().to_string(),
        }),
        human: format!(
            "estimated {} steps (log-likelihood {:.3}); trajectory in {}, summary in {}",
            summary.n_steps,
            summary.log_likelihood,
            csv_path.display(),
            json_path.display()
        ),
    })
}
