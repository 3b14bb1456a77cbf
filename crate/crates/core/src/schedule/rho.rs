//! Receding-horizon schedule optimization.
//!
//! Solving the full N-step design problem couples 2N variables; the
//! receding-horizon driver instead solves a truncated H-step problem at
//! every time index, commits only the first tilt, advances the covariance
//! recursion by that tilt, and re-solves. From the second index on, the
//! previous solution shifted by one step (final slot duplicated) seeds the
//! warm starts, together with randomly perturbed copies of it.

use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use super::solver::optimize_horizon;
use super::{
    MultiStartSettings, OptimizerDiagnostics, ScheduleObjective, ScheduleResult, SolverSettings,
    TiltSequence,
};
use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::estimate::{posterior_covariance, predicted_covariance};
use crate::model::LinearModel;
use crate::sim::derive_seed;

/// Perturbed copies of the shifted previous solution for warm starting.
fn warm_starts(
    previous: &[Tilt],
    bounds: &[f64],
    count: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<TiltSequence>> {
    if count == 0 || previous.is_empty() {
        return Ok(Vec::new());
    }
    // Shift by one step and duplicate the final slot, then fit the new
    // horizon length.
    let mut shifted: Vec<Tilt> = previous[1..].to_vec();
    let last = *previous.last().unwrap();
    shifted.push(last);
    shifted.resize(bounds.len(), last);
    shifted.truncate(bounds.len());

    let mut out = Vec::with_capacity(count);
    out.push(TiltSequence::clamped(shifted.clone(), bounds.to_vec())?);
    for _ in 1..count {
        let perturbed: Vec<Tilt> = shifted
            .iter()
            .zip(bounds)
            .map(|(t, &b)| {
                let sigma = 0.2 * b;
                Tilt::new(
                    t.tx + sigma * rng.sample::<f64, _>(StandardNormal),
                    t.ty + sigma * rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        out.push(TiltSequence::clamped(perturbed, bounds.to_vec())?);
    }
    Ok(out)
}

/// Designs an N-step sequence by receding-horizon optimization with horizon
/// `H` (truncated to the remaining steps near the end). `H = 1` is the
/// greedy design, whose every prefix is itself a valid shorter design.
pub fn receding_horizon(
    model: &LinearModel,
    weight: &nalgebra::DMatrix<f64>,
    n: usize,
    horizon: usize,
    multi: &MultiStartSettings,
    settings: &SolverSettings,
    seed: u64,
) -> Result<ScheduleResult> {
    if n < 1 || horizon < 1 || horizon > n {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= H <= N, got H = {horizon}, N = {n}"
        )));
    }
    if multi.n_starts < 1 {
        return Err(Error::InvalidArgument("n_starts must be >= 1".into()));
    }

    let mut prior = model.prior_cov().clone();
    let mut committed: Vec<Tilt> = Vec::with_capacity(n);
    let mut committed_bounds: Vec<f64> = Vec::with_capacity(n);
    let mut trajectory = Vec::with_capacity(n);
    let mut previous_solution: Option<Vec<Tilt>> = None;

    let mut iterations_total = 0;
    let mut all_converged = true;
    let mut last_diag = OptimizerDiagnostics {
        starts_tried: multi.n_starts,
        best_start: 0,
        iterations: 0,
        final_gradient_norm: f64::NAN,
        converged: true,
    };

    for k in 0..n {
        let h = horizon.min(n - k);
        let bounds: Vec<f64> = (k..k + h).map(|i| model.tilt_bound(i)).collect();
        let objective = ScheduleObjective::with_start_prior(model, weight.clone(), prior.clone())?;

        let warm = match &previous_solution {
            Some(prev) => {
                let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, 2 * k as u64 + 1));
                warm_starts(prev, &bounds, multi.n_warm.min(multi.n_starts), &mut rng)?
            }
            None => Vec::new(),
        };
        let step_seed = derive_seed(seed, 2 * k as u64);
        let result = optimize_horizon(
            &objective,
            &bounds,
            multi.n_starts,
            &warm,
            step_seed,
            settings,
        )?;

        let first = result.sequence.tilts()[0];
        committed.push(first);
        committed_bounds.push(bounds[0]);
        let post = posterior_covariance(model, &prior, first)?;
        trajectory.push((weight * &post).trace());
        prior = predicted_covariance(model, &post);

        previous_solution = Some(result.sequence.tilts().to_vec());
        iterations_total += result.diagnostics.iterations;
        all_converged &= result.diagnostics.converged;
        last_diag = result.diagnostics;
    }

    Ok(ScheduleResult {
        sequence: TiltSequence::new(committed, committed_bounds)?,
        cost_trajectory: trajectory,
        diagnostics: OptimizerDiagnostics {
            starts_tried: multi.n_starts,
            best_start: last_diag.best_start,
            iterations: iterations_total,
            final_gradient_norm: last_diag.final_gradient_norm,
            converged: all_converged,
        },
    })
}
