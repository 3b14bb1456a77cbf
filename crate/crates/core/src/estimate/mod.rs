//! Kalman filtering, smoothing, and batch covariance prediction.
//!
//! The recursive filter alternates measurement updates (Joseph form, for
//! covariance robustness over long runs) and predictions. Because the
//! error covariance never depends on the measurement values, the same
//! covariances can also be obtained in one shot from the batch formulas in
//! [`batch`]; the two routes agreeing to tight tolerance is the module's
//! central regression anchor, and the batch route is what makes offline
//! schedule optimization possible.
//!
//! Everything operates in the model's normalized state coordinates;
//! de-normalization happens only at reporting boundaries.

mod batch;
mod stats;

pub use batch::{
    batch_posterior_cov, batch_posterior_cov_from, batch_predicted_cov, batch_predicted_cov_from,
    lifted_observation, LiftedObservation,
};
pub(crate) use batch::{batch_correction_with, forward_kernel, ForwardKernel};
pub use stats::{chi_square_quantile, nees, normal_quantile};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// A state estimate with its error covariance at one time index.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub step: usize,
}

impl FilterState {
    /// The prior before any measurement.
    pub fn initial(model: &LinearModel) -> Self {
        Self {
            mean: model.prior_mean().clone(),
            cov: model.prior_cov().clone(),
            step: 0,
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Time propagation: `mean <- A mean`, `cov <- A cov A^T + Q`.
pub fn kf_predict(state: &FilterState, model: &LinearModel) -> FilterState {
    let a = model.transition();
    let mean = a * &state.mean;
    let mut cov = a * &state.cov * a.transpose() + model.process_noise();
    symmetrize(&mut cov);
    FilterState {
        mean,
        cov,
        step: state.step + 1,
    }
}

fn innovation_covariance(
    model: &LinearModel,
    cov: &DMatrix<f64>,
    c: &DMatrix<f64>,
) -> (DMatrix<f64>, Matrix2<f64>) {
    let pct = cov * c.transpose(); // d x 2
    let s_dyn = c * &pct;
    let mut s = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            s[(i, j)] = s_dyn[(i, j)] + model.measurement_noise()[(i, j)];
        }
    }
    (pct, s)
}

/// Measurement update in Joseph form. Requires the innovation covariance to
/// be invertible, which holds whenever the measurement noise is SPD.
pub fn kf_update(
    state: &FilterState,
    model: &LinearModel,
    theta: Tilt,
    y: &Vector2<f64>,
) -> Result<FilterState> {
    let c = model.observation(theta);
    let (pct, s) = innovation_covariance(model, &state.cov, &c);
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&pct.transpose()).transpose(); // d x 2

    let innovation = y - &c * &state.mean;
    let mean = &state.mean + &gain * innovation;

    let d = state.mean.len();
    let l = DMatrix::<f64>::identity(d, d) - &gain * &c;
    let mut cov =
        &l * &state.cov * l.transpose() + &gain * model.measurement_noise() * gain.transpose();
    symmetrize(&mut cov);
    Ok(FilterState {
        mean,
        cov,
        step: state.step,
    })
}

/// Full filter pass: predicted (prior) and posterior estimates at each step.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub predicted: Vec<FilterState>,
    pub posterior: Vec<FilterState>,
}

impl FilterRun {
    pub fn len(&self) -> usize {
        self.posterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior.is_empty()
    }

    pub fn final_posterior(&self) -> &FilterState {
        self.posterior.last().expect("non-empty filter run")
    }

    pub fn covariance_trajectory(&self) -> CovarianceTrajectory {
        CovarianceTrajectory {
            predicted: self.predicted.iter().map(|s| s.cov.clone()).collect(),
            posterior: self.posterior.iter().map(|s| s.cov.clone()).collect(),
        }
    }
}

/// Predicted and posterior covariances over a run. Identical for any two
/// measurement realizations of the same tilt sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTrajectory {
    pub predicted: Vec<DMatrix<f64>>,
    pub posterior: Vec<DMatrix<f64>>,
}

impl CovarianceTrajectory {
    /// `tr(W P_{k|k})` per step.
    pub fn weighted_posterior_traces(&self, weight: &DMatrix<f64>) -> Vec<f64> {
        self.posterior.iter().map(|p| (weight * p).trace()).collect()
    }

    /// `tr(W P_{k|k-1})` per step.
    pub fn weighted_predicted_traces(&self, weight: &DMatrix<f64>) -> Vec<f64> {
        self.predicted.iter().map(|p| (weight * p).trace()).collect()
    }
}

/// Runs update/predict from the model prior over a measurement record.
pub fn run_filter(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
) -> Result<FilterRun> {
    if tilts.len() != measurements.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tilts but {} measurements",
            tilts.len(),
            measurements.len()
        )));
    }
    let mut prior = FilterState::initial(model);
    let mut predicted = Vec::with_capacity(tilts.len());
    let mut posterior = Vec::with_capacity(tilts.len());
    for (k, (&theta, y)) in tilts.iter().zip(measurements).enumerate() {
        prior.step = k;
        predicted.push(prior.clone());
        let post = kf_update(&prior, model, theta, y)?;
        prior = kf_predict(&post, model);
        posterior.push(post);
    }
    Ok(FilterRun {
        predicted,
        posterior,
    })
}

/// Joseph-form posterior covariance for one measurement at the given tilt.
pub fn posterior_covariance(
    model: &LinearModel,
    prior_cov: &DMatrix<f64>,
    theta: Tilt,
) -> Result<DMatrix<f64>> {
    let c = model.observation(theta);
    let (pct, s) = innovation_covariance(model, prior_cov, &c);
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    let gain = chol.solve(&pct.transpose()).transpose();
    let d = model.dim();
    let l = DMatrix::<f64>::identity(d, d) - &gain * &c;
    let mut post =
        &l * prior_cov * l.transpose() + &gain * model.measurement_noise() * gain.transpose();
    symmetrize(&mut post);
    Ok(post)
}

/// One-step covariance propagation `A P A^T + Q`.
pub fn predicted_covariance(model: &LinearModel, posterior_cov: &DMatrix<f64>) -> DMatrix<f64> {
    let a = model.transition();
    let mut cov = a * posterior_cov * a.transpose() + model.process_noise();
    symmetrize(&mut cov);
    cov
}

/// Covariance-only recursion for a tilt sequence, starting from an optional
/// replacement prior. Measurement values are never consulted.
pub fn covariance_recursion(
    model: &LinearModel,
    tilts: &[Tilt],
    start_prior: Option<&DMatrix<f64>>,
) -> Result<CovarianceTrajectory> {
    let mut cov = start_prior.unwrap_or(model.prior_cov()).clone();
    let mut predicted = Vec::with_capacity(tilts.len());
    let mut posterior = Vec::with_capacity(tilts.len());
    for &theta in tilts {
        predicted.push(cov.clone());
        let post = posterior_covariance(model, &cov, theta)?;
        posterior.push(post.clone());
        cov = predicted_covariance(model, &post);
    }
    Ok(CovarianceTrajectory {
        predicted,
        posterior,
    })
}

/// Fixed-interval smoothed estimates `x_{k|N-1}`, `P_{k|N-1}`.
#[derive(Debug, Clone)]
pub struct SmoothedRun {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Rauch-Tung-Striebel smoother over a completed filter pass. The final
/// step equals the filter posterior; every smoothed covariance is below the
/// filtered one in the PSD order.
pub fn rts_smooth(model: &LinearModel, run: &FilterRun) -> Result<SmoothedRun> {
    let n = run.len();
    if n == 0 {
        return Ok(SmoothedRun {
            means: Vec::new(),
            covs: Vec::new(),
        });
    }
    let a = model.transition();
    let mut means = vec![DVector::zeros(0); n];
    let mut covs = vec![DMatrix::zeros(0, 0); n];
    means[n - 1] = run.posterior[n - 1].mean.clone();
    covs[n - 1] = run.posterior[n - 1].cov.clone();

    for k in (0..n - 1).rev() {
        let post = &run.posterior[k];
        let pred_next = &run.predicted[k + 1];
        // G = P_{k|k} A^T P_{k+1|k}^-1, via G^T = P_{k+1|k}^-1 A P_{k|k}.
        let rhs = a * &post.cov;
        let gain_t = solve_spd(&pred_next.cov, &rhs)?;
        let gain = gain_t.transpose();
        means[k] = &post.mean + &gain * (&means[k + 1] - &pred_next.mean);
        let mut cov =
            &post.cov + &gain * (&covs[k + 1] - &pred_next.cov) * gain.transpose();
        symmetrize(&mut cov);
        covs[k] = cov;
    }
    Ok(SmoothedRun { means, covs })
}

/// Solves `M X = B` for symmetric positive definite `M`, with an LU
/// fallback for borderline-conditioned inputs.
fn solve_spd(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    m.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::InvalidArgument("singular predicted covariance".into()))
}

/// Exact Gaussian log-likelihood of a measurement record via the filter's
/// innovation decomposition.
pub fn innovation_log_likelihood(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
) -> Result<f64> {
    if tilts.len() != measurements.len() {
        return Err(Error::InvalidArgument(format!(
            "{} tilts but {} measurements",
            tilts.len(),
            measurements.len()
        )));
    }
    const LOG_2PI: f64 = 1.8378770664093453;
    let mut prior = FilterState::initial(model);
    let mut ll = 0.0;
    for (&theta, y) in tilts.iter().zip(measurements) {
        let c = model.observation(theta);
        let (pct, s) = innovation_covariance(model, &prior.cov, &c);
        let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
        let innovation = y - &c * &prior.mean;
        let white = chol.solve(&innovation);
        let log_det = 2.0 * (chol.l()[(0, 0)].ln() + chol.l()[(1, 1)].ln());
        ll += -0.5 * (2.0 * LOG_2PI + log_det + innovation.dot(&white));

        let gain = chol.solve(&pct.transpose()).transpose();
        let mean = &prior.mean + &gain * innovation;
        let d = mean.len();
        let l = DMatrix::<f64>::identity(d, d) - &gain * &c;
        let mut cov =
            &l * &prior.cov * l.transpose() + &gain * model.measurement_noise() * gain.transpose();
        symmetrize(&mut cov);
        prior = kf_predict(
            &FilterState {
                mean,
                cov,
                step: prior.step,
            },
            model,
        );
    }
    Ok(ll)
}

/// Writes a filter (and optionally smoothed) trajectory as CSV: one row per
/// step with tilts, measurements, state means, and covariance diagonals.
pub fn write_trajectory_csv<W: std::io::Write>(
    model: &LinearModel,
    tilts: &[Tilt],
    measurements: &[Vector2<f64>],
    run: &FilterRun,
    smoothed: Option<&SmoothedRun>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let names = model.layout().slot_names();
    let mut header = vec![
        "k".to_string(),
        "tx".to_string(),
        "ty".to_string(),
        "y_x".to_string(),
        "y_y".to_string(),
    ];
    for n in &names {
        header.push(format!("mean_{n}"));
    }
    for n in &names {
        header.push(format!("var_{n}"));
    }
    if smoothed.is_some() {
        for n in &names {
            header.push(format!("smooth_mean_{n}"));
        }
        for n in &names {
            header.push(format!("smooth_var_{n}"));
        }
    }
    w.write_record(&header)?;
    for k in 0..run.len() {
        let mut record = vec![
            k.to_string(),
            format!("{}", tilts[k].tx),
            format!("{}", tilts[k].ty),
            format!("{}", measurements[k][0]),
            format!("{}", measurements[k][1]),
        ];
        let post = &run.posterior[k];
        record.extend(post.mean.iter().map(|v| format!("{v}")));
        record.extend(post.cov.diagonal().iter().map(|v| format!("{v}")));
        if let Some(s) = smoothed {
            record.extend(s.means[k].iter().map(|v| format!("{v}")));
            record.extend(s.covs[k].diagonal().iter().map(|v| format!("{v}")));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}
