//! `tiltshift correct`: closed-loop correction against the simulator:
//! estimate, subtract the estimated aberrations from the ground truth
//! (standing in for adjusting the lenses), re-measure, repeat.

use std::path::PathBuf;

use clap::Args;
use nalgebra::DVector;
use serde_json::json;

use tiltshift_core::estimate::run_filter;
use tiltshift_core::model::build_model;
use tiltshift_core::sim::{derive_seed, simulate_trajectory};

use crate::formats::{CorrectionReport, CorrectionRound, SCHEMA};
use crate::io_util::{load_config, load_experiment, to_pretty_json, write_text};
use crate::{CliError, CliResult, CommandOutput};

#[derive(Args, Debug)]
pub struct CorrectArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Simulated experiment whose ground truth seeds the loop.
    #[arg(long)]
    pub experiment: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn aberration_magnitudes(state: &DVector<f64>, l: usize) -> Vec<f64> {
    (0..l).map(|j| state[j].abs()).collect()
}

pub fn run(args: &CorrectArgs) -> CliResult<CommandOutput> {
    if args.rounds < 1 {
        return Err(CliError::Validation("need at least one round".into()));
    }
    let config = load_config(&args.config)?;
    let model = build_model(&config)?;
    let record = load_experiment(&args.experiment)?;
    let truth_states = record.truth_states.as_ref().ok_or_else(|| {
        CliError::Validation("correction requires a simulated record with ground truth".into())
    })?;
    let l = model.layout().aberration_dim();

    let mut truth = DVector::from_vec(truth_states[0].clone());
    if truth.len() != model.dim() {
        return Err(CliError::Validation(format!(
            "record state dimension {} does not match the model ({})",
            truth.len(),
            model.dim()
        )));
    }
    let initial_median = median(aberration_magnitudes(&truth, l));

    let mut rounds = Vec::with_capacity(args.rounds);
    for round in 1..=args.rounds {
        let sim = simulate_trajectory(
            &model,
            &record.tilts,
            &truth,
            derive_seed(args.seed, round as u64),
        )?;
        let filtered = run_filter(&model, &record.tilts, &sim.measurements)?;
        let estimate = &filtered.final_posterior().mean;

        // The microscope moves on while we estimate: correction applies to
        // the state at the end of the round, and only to the aberrations.
        let mut next = sim.states.last().expect("nonempty run").clone();
        for j in 0..l {
            next[j] -= estimate[j];
        }
        truth = next;

        let residual = median(aberration_magnitudes(&truth, l));
        rounds.push(CorrectionRound {
            round,
            median_residual: residual,
            ratio_to_initial: residual / initial_median,
        });
    }

    let report = CorrectionReport {
        schema: SCHEMA,
        initial_median,
        rounds,
    };
    write_text(&args.out, &to_pretty_json(&report)?)?;

    let final_ratio = report.rounds.last().unwrap().ratio_to_initial;
    Ok(CommandOutput {
        summary: json!({
            "initial_median": report.initial_median,
            "final_ratio": final_ratio,
            "rounds": report.rounds.len(),
            "out": args.out.display().to_string(),
        }),
        human: format!(
            "after {} round(s), median aberration residual is {:.2}% of initial ({} written)",
            report.rounds.len(),
            100.0 * final_ratio,
            args.out.display()
        ),
    })
}
