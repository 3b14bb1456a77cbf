//! `tiltshift evaluate`: Monte-Carlo comparison of the filter's predicted
//! accuracy against realized estimation errors, per pattern.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DVector;
use rayon::prelude::*;

use tiltshift_core::estimate::{
    chi_square_quantile, covariance_recursion, nees, run_filter,
};
use tiltshift_core::model::build_model;
use tiltshift_core::schedule::uniform_weight;
use tiltshift_core::sim::{derive_seed, sample_prior_state, simulate_trajectory};

use crate::formats::{EvaluationReport, PatternEvaluation, StateAccuracy, SCHEMA};
use crate::io_util::{load_config, load_pattern, to_pretty_json, write_text};
use crate::{CliError, CliResult, CommandOutput};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// One or more pattern files to compare.
    #[arg(long, required = true, num_args = 1..)]
    pub patterns: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub runs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output prefix; writes `<out>.json` and `<out>.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: &EvaluateArgs) -> CliResult<CommandOutput> {
    if args.runs < 2 {
        return Err(CliError::Validation("need at least 2 runs".into()));
    }
    let config = load_config(&args.config)?;
    let model = build_model(&config)?;
    let weight = uniform_weight(&model);
    let d = model.dim();
    let names = model.layout().slot_names();

    let mut evaluations = Vec::new();
    for (pattern_index, path) in args.patterns.iter().enumerate() {
        let pattern = load_pattern(path)?;
        let tilts = pattern.result.sequence.tilts().to_vec();

        // Offline prediction: covariances never touch the data.
        let trajectory = covariance_recursion(&model, &tilts, None)?;
        let cost_trajectory = trajectory.weighted_posterior_traces(&weight);
        let final_cov = trajectory.posterior.last().unwrap().clone();
        let predicted_std: Vec<f64> = (0..d)
            .map(|j| final_cov[(j, j)].max(0.0).sqrt())
            .collect();

        // Realized errors across independent simulated runs.
        let run_results: Vec<CliResult<(DVector<f64>, f64)>> = (0..args.runs)
            .into_par_iter()
            .map(|run| {
                let base = (pattern_index * args.runs + run) as u64;
                let truth = sample_prior_state(&model, derive_seed(args.seed, 2 * base));
                let sim =
                    simulate_trajectory(&model, &tilts, &truth, derive_seed(args.seed, 2 * base + 1))
                        .map_err(CliError::from)?;
                let filtered =
                    run_filter(&model, &tilts, &sim.measurements).map_err(CliError::from)?;
                let error =
                    &filtered.final_posterior().mean - sim.states.last().expect("nonempty run");
                let nees_value = nees(&error, &final_cov).map_err(CliError::from)?;
                Ok((error, nees_value))
            })
            .collect();

        let mut errors = Vec::with_capacity(args.runs);
        let mut nees_values = Vec::with_capacity(args.runs);
        for r in run_results {
            let (e, v) = r?;
            errors.push(e);
            nees_values.push(v);
        }

        let mut per_state = Vec::with_capacity(d);
        for j in 0..d {
            let mean: f64 = errors.iter().map(|e| e[j]).sum::<f64>() / args.runs as f64;
            let var: f64 = errors
                .iter()
                .map(|e| (e[j] - mean).powi(2))
                .sum::<f64>()
                / (args.runs - 1) as f64;
            let realized = var.sqrt();
            per_state.push(StateAccuracy {
                slot: names[j].clone(),
                predicted_std: predicted_std[j],
                realized_std: realized,
                ratio: realized / predicted_std[j],
            });
        }

        let nees_mean: f64 = nees_values.iter().sum::<f64>() / args.runs as f64;
        let dof = (args.runs * d) as f64;
        let nees_lower = chi_square_quantile(0.005, dof) / args.runs as f64;
        let nees_upper = chi_square_quantile(0.995, dof) / args.runs as f64;

        evaluations.push(PatternEvaluation {
            pattern: path.display().to_string(),
            kind: pattern.kind.clone(),
            final_weighted_trace: *cost_trajectory.last().expect("nonempty trajectory"),
            cost_trajectory,
            nees_mean,
            nees_lower,
            nees_upper,
            nees_within_bounds: nees_mean >= nees_lower && nees_mean <= nees_upper,
            per_state,
        });
    }

    let report = EvaluationReport {
        schema: SCHEMA,
        runs: args.runs,
        seed: args.seed,
        patterns: evaluations,
    };
    let json_path = args.out.with_extension("json");
    write_text(&json_path, &to_pretty_json(&report)?)?;

    let mut csv = String::from("pattern,kind,slot,predicted_std,realized_std,ratio\n");
    for e in &report.patterns {
        for s in &e.per_state {
            csv.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.pattern, e.kind, s.slot, s.predicted_std, s.realized_std, s.ratio
            ));
        }
    }
    let csv_path = args.out.with_extension("csv");
    write_text(&csv_path, &csv)?;

    let human = report
        .patterns
        .iter()
        .map(|e| {
            format!(
                "{} ({}): final trace {:.6e}, NEES {:.2} in [{:.2}, {:.2}] -> {}",
                e.pattern,
                e.kind,
                e.final_weighted_trace,
                e.nees_mean,
                e.nees_lower,
                e.nees_upper,
                if e.nees_within_bounds { "ok" } else { "OUT OF BAND" }
            )
        })
        .collect::<Vec<_>>()
        .join("\n");

    Ok(CommandOutput {
        summary: serde_json::to_value(&report)
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        human: format!(
            "{human}\nreport written to {} and {}",
            json_path.display(),
            csv_path.display()
        ),
    })
}
