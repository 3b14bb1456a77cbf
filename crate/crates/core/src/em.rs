//! Expectation-maximization estimation of the measurement-noise covariance.
//!
//! Different specimens and imaging conditions change how precisely image
//! shifts can be tracked, so the 2 x 2 measurement noise covariance has to
//! be calibrated from recorded tilt/shift data before it can inform the
//! schedule optimization. The E-step smooths the record under the current
//! noise estimate; the M-step replaces the estimate with
//!
//! ```text
//! Sigma = 1/N sum_k (y_k - C_k m_k)(y_k - C_k m_k)^T + C_k P_k C_k^T
//! ```
//!
//! over the smoothed means `m_k` and covariances `P_k`. Each iteration can
//! only raise the data likelihood, so the innovation log-likelihood doubles
//! as the convergence monitor and as the selector among initializations.
//! Only the measurement noise is re-estimated; process noise and priors are
//! assumed known.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::estimate::{innovation_log_likelihood, rts_smooth, run_filter, SmoothedRun};
use crate::model::LinearModel;

/// EM iteration controls. Initializations are in shift-scale (config)
/// units, like `ModelConfig::measurement_noise`.
#[derive(Debug, Clone)]
pub struct EmSettings {
    pub max_iterations: usize,
    pub log_likelihood_tolerance: f64,
    pub initializations: Vec<Matrix2<f64>>,
    /// Eigenvalue floor (shift-scale units) applied after every M-step so
    /// short records cannot produce a degenerate covariance.
    pub jitter_floor: f64,
}

impl EmSettings {
    /// Three initializations bracketing a rough guess: 0.1x, 1x, and 10x.
    pub fn from_rough_guess(guess: Matrix2<f64>) -> Self {
        Self {
            max_iterations: 200,
            log_likelihood_tolerance: 1e-8,
            initializations: vec![guess * 0.1, guess, guess * 10.0],
            jitter_floor: 1e-12,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.log_likelihood_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.initializations.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one initialization required".into(),
            ));
        }
        for (i, init) in self.initializations.iter().enumerate() {
            let symmetric = (init[(0, 1)] - init[(1, 0)]).abs() <= 1e-12 * (1.0 + init.amax());
            if !symmetric || !(init[(0, 0)] > 0.0) || !(init.determinant() > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "initialization {i} is not symmetric positive definite"
                )));
            }
        }
        Ok(())
    }
}

/// Per-initialization outcome.
#[derive(Debug, Clone)]
pub struct EmInitDiagnostic {
    pub init_index: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    pub diverged: bool,
}

/// Converged estimate (shift-scale units) with its likelihood history.
#[derive(Debug, Clone)]
pub struct EmResult {
    pub sigma_eps: Matrix2<f64>,
    /// Innovation log-likelihood at the initialization and after each
    /// M-step, for the chosen initialization. Non-decreasing up to
    /// numerical slack.
    pub log_likelihood_trace: Vec<f64>,
    pub chosen_init: usize,
    pub per_init: Vec<EmInitDiagnostic>,
}

/// One tilt/shift record.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub tilts: &'a [Tilt],
    pub measurements: &'a [Vector2<f64>],
}

/// The M-step update (physical measurement units): average over the record
/// of the smoothed squared residual plus the propagated smoothed state
/// uncertainty, symmetrized.
pub fn em_mstep(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
    smoothed: &SmoothedRun,
) -> Result<Matrix2<f64>> {
    let (sum, count) = mstep_accumulate(model, tilts, measurements, smoothed)?;
    if count == 0 {
        return Err(Error::InvalidArgument("empty record in M-step".into()));
    }
    Ok(sum / count as f64)
}

fn mstep_accumulate(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
    smoothed: &SmoothedRun,
) -> Result<(Matrix2<f64>, usize)> {
    let n = tilts.len();
    if measurements.len() != n || smoothed.means.len() != n {
        return Err(Error::InvalidArgument(
            "tilts, measurements, and smoothed output must have equal lengths".into(),
        ));
    }
    let mut sum = Matrix2::zeros();
    for k in 0..n {
        let c = model.observation(tilts[k]);
        let residual = measurements[k] - Vector2::from_iterator((&c * &smoothed.means[k]).iter().copied());
        let propagated = &c * &smoothed.covs[k] * c.transpose();
        for a in 0..2 {
            for b in 0..2 {
                sum[(a, b)] += residual[a] * residual[b] + propagated[(a, b)];
            }
        }
    }
    let sym = (sum + sum.transpose()) * 0.5;
    Ok((sym, n))
}

/// Floors the eigenvalues of a symmetric 2 x 2 matrix.
fn floor_eigenvalues(m: Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let eig = m.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

struct InitRun {
    sigma: Matrix2<f64>,
    trace: Vec<f64>,
    diagnostic: EmInitDiagnostic,
}

fn run_init(
    model: &LinearModel,
    datasets: &[Dataset<'_>],
    settings: &EmSettings,
    init_index: usize,
) -> Result<InitRun> {
    let mut sigma = settings.initializations[init_index];
    let mut current = model.with_measurement_noise_normalized(sigma);
    let total_ll = |m: &LinearModel| -> Result<f64> {
        let mut ll = 0.0;
        for ds in datasets {
            ll += innovation_log_likelihood(m, ds.tilts, ds.measurements)?;
        }
        Ok(ll)
    };

    let mut trace = vec![total_ll(&current)?];
    let mut converged = false;
    let mut diverged = !trace[0].is_finite();
    let mut iterations = 0;

    while !diverged && iterations < settings.max_iterations {
        iterations += 1;
        let mut sum = Matrix2::zeros();
        let mut count = 0usize;
        for ds in datasets {
            let run = run_filter(&current, ds.tilts, ds.measurements)?;
            let smoothed = rts_smooth(&current, &run)?;
            let (s, n) = mstep_accumulate(&current, ds.tilts, ds.measurements, &smoothed)?;
            sum += s;
            count += n;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("empty record in M-step".into()));
        }
        let physical = sum / count as f64;
        // Back to shift-scale units, then keep it safely positive definite.
        let scales = model.scales();
        let d_inv = Matrix2::new(1.0 / scales[0], 0.0, 0.0, 1.0 / scales[1]);
        sigma = floor_eigenvalues(d_inv * physical * d_inv, settings.jitter_floor);
        current = model.with_measurement_noise_normalized(sigma);

        let ll = total_ll(&current)?;
        trace.push(ll);
        if !ll.is_finite() {
            diverged = true;
            break;
        }
        let delta = (trace[trace.len() - 1] - trace[trace.len() - 2]).abs();
        if delta <= settings.log_likelihood_tolerance {
            converged = true;
            break;
        }
    }

    let final_ll = *trace.last().unwrap();
    Ok(InitRun {
        sigma,
        trace,
        diagnostic: EmInitDiagnostic {
            init_index,
            iterations,
            final_log_likelihood: final_ll,
            converged,
            diverged,
        },
    })
}

/// Fits the measurement noise to several independent records that share one
/// covariance. Initializations run in parallel; the one with the highest
/// final likelihood wins.
pub fn em_fit_multi(
    model: &LinearModel,
    datasets: &[Dataset<'_>],
    settings: &EmSettings,
) -> Result<EmResult> {
    settings.validate()?;
    if datasets.is_empty() || datasets.iter().any(|d| d.tilts.is_empty()) {
        return Err(Error::InvalidArgument("empty EM dataset".into()));
    }
    for ds in datasets {
        if ds.tilts.len() != ds.measurements.len() {
            return Err(Error::InvalidArgument(
                "tilt/measurement length mismatch".into(),
            ));
        }
    }

    let runs: Vec<Result<InitRun>> = (0..settings.initializations.len())
        .into_par_iter()
        .map(|i| run_init(model, datasets, settings, i))
        .collect();

    let mut per_init = Vec::new();
    let mut best: Option<InitRun> = None;
    let mut first_error = None;
    for run in runs {
        match run {
            Ok(r) => {
                per_init.push(r.diagnostic.clone());
                if !r.diagnostic.diverged {
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            r.diagnostic.final_log_likelihood
                                > b.diagnostic.final_log_likelihood
                        }
                    };
                    if better {
                        best = Some(r);
                    }
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e);
                }
            }
        }
    }
    match best {
        Some(winner) => Ok(EmResult {
            sigma_eps: winner.sigma,
            log_likelihood_trace: winner.trace,
            chosen_init: winner.diagnostic.init_index,
            per_init,
        }),
        None => Err(first_error.unwrap_or_else(|| {
            Error::AllInitializationsDiverged(format!(
                "{} initializations, all with non-finite likelihood",
                settings.initializations.len()
            ))
        })),
    }
}

/// Fits the measurement noise to a single record.
pub fn em_fit(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
    settings: &EmSettings,
) -> Result<EmResult> {
    em_fit_multi(
        model,
        &[Dataset {
            tilts,
            measurements,
        }],
        settings,
    )
}
