//! `tiltshift emfit`: calibrate the measurement-noise covariance with EM
//! over one or more recorded runs.

use std::path::PathBuf;

use clap::Args;
use nalgebra::{Matrix2, Vector2};
use serde_json::json;

use tiltshift_core::em::{em_fit_multi, Dataset, EmSettings};
use tiltshift_core::model::build_model;

use crate::formats::{EmDoc, EmInitDoc, SCHEMA};
use crate::io_util::{load_config, load_experiment, to_pretty_json, write_text};
use crate::{CliResult, CommandOutput};

#[derive(Args, Debug)]
pub struct EmfitArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// One or more experiment records sharing the same noise covariance.
    #[arg(long, required = true, num_args = 1..)]
    pub experiments: Vec<PathBuf>,
    /// Rough isotropic variance guess in shift-scale units; defaults to the
    /// config's measurement noise. EM starts from 0.1x, 1x, and 10x of it.
    #[arg(long)]
    pub guess: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tolerance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EmfitArgs) -> CliResult<CommandOutput> {
    let config = load_config(&args.config)?;
    let model = build_model(&config)?;

    let mut loaded = Vec::new();
    for path in &args.experiments {
        let record = load_experiment(path)?;
        let measurements: Vec<Vector2<f64>> = record
            .measurements
            .iter()
            .map(|y| Vector2::new(y[0], y[1]))
            .collect();
        loaded.push((record.tilts, measurements));
    }
    let datasets: Vec<Dataset> = loaded
        .iter()
        .map(|(tilts, measurements)| Dataset {
            tilts,
            measurements,
        })
        .collect();

    let guess = match args.guess {
        Some(v) => Matrix2::new(v, 0.0, 0.0, v),
        None => Matrix2::new(
            config.measurement_noise[0][0],
            config.measurement_noise[0][1],
            config.measurement_noise[1][0],
            config.measurement_noise[1][1],
        ),
    };
    let mut settings = EmSettings::from_rough_guess(guess);
    settings.max_iterations = args.max_iterations;
    settings.log_likelihood_tolerance = args.tolerance;

    let result = em_fit_multi(&model, &datasets, &settings)?;
    let doc = EmDoc {
        schema: SCHEMA,
        sigma_eps: [
            [result.sigma_eps[(0, 0)], result.sigma_eps[(0, 1)]],
            [result.sigma_eps[(1, 0)], result.sigma_eps[(1, 1)]],
        ],
        chosen_init: result.chosen_init,
        log_likelihood_trace: result.log_likelihood_trace.clone(),
        per_init: result
            .per_init
            .iter()
            .map(|d| EmInitDoc {
                init_index: d.init_index,
                iterations: d.iterations,
                final_log_likelihood: d.final_log_likelihood,
                converged: d.converged,
                diverged: d.diverged,
            })
            .collect(),
    };
    write_text(&args.out, &to_pretty_json(&doc)?)?;

    Ok(CommandOutput {
        summary: json!({
            "sigma_eps": doc.sigma_eps,
            "chosen_init": doc.chosen_init,
            "iterations": doc.per_init[doc.chosen_init].iterations,
            "out": args.out.display().to_string(),
        }),
        human: format!(
            "EM converged from initialization {} in {} iteration(s); sigma_eps = [[{:.4e}, {:.4e}], [{:.4e}, {:.4e}]] written to {}",
            doc.chosen_init,
            doc.per_init[doc.chosen_init].iterations,
            doc.sigma_eps[0][0],
            doc.sigma_eps[0][1],
            doc.sigma_eps[1][0],
            doc.sigma_eps[1][1],
            args.out.display()
        ),
    })
}
