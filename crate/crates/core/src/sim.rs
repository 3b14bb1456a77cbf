//! Synthetic trajectory generator.
//!
//! Stands in for the physical microscope: propagates a ground-truth state
//! through the model dynamics with process noise and produces shift
//! measurements with measurement noise. Everything is reproducible from the
//! seed; independent runs of one campaign should use [`derive_seed`] to
//! obtain decorrelated sub-streams from a single master seed.

use nalgebra::{DMatrix, DVector, Vector2};
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// Ground-truth states and the measurements they produced, both in the
/// model's normalized state coordinates / physical measurement units.
#[derive(Debug, Clone)]
pub struct SimulatedTrajectory {
    pub states: Vec<DVector<f64>>,
    pub measurements: Vec<Vector2<f64>>,
}

/// Counter-based sub-stream derivation: one master seed, one index per run.
/// SplitMix64 finalization keeps the derived seeds decorrelated.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn normal_vector(rng: &mut ChaCha12Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Simulates `x_{k+1} = A x_k + noise`, `y_k = C(theta_k) x_k + noise` over
/// the tilt sequence, starting from `truth_init` (normalized).
pub fn simulate_trajectory(
    model: &LinearModel,
    tilts: &[Tilt],
    truth_init: &DVector<f64>,
    seed: u64,
) -> Result<SimulatedTrajectory> {
    let d = model.dim();
    if truth_init.len() != d {
        return Err(Error::InvalidArgument(format!(
            "truth_init has length {}, expected {d}",
            truth_init.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // Diagonal process noise: take element-wise square roots directly.
    let process_std: DVector<f64> = model.process_noise().diagonal().map(|v| v.sqrt());
    let noise_chol = model
        .measurement_noise()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("measurement noise is not SPD".into()))?;

    let mut states = Vec::with_capacity(tilts.len());
    let mut measurements = Vec::with_capacity(tilts.len());
    let mut x = truth_init.clone();
    for &theta in tilts {
        let c = model.observation(theta);
        let eps = noise_chol.l() * Vector2::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let y = Vector2::from_iterator((&c * &x).iter().copied()) + eps;
        states.push(x.clone());
        measurements.push(y);

        let xi = normal_vector(&mut rng, d).component_mul(&process_std);
        x = model.transition() * &x + xi;
    }
    Ok(SimulatedTrajectory {
        states,
        measurements,
    })
}

/// Draws a state from the model prior (normalized coordinates).
pub fn sample_prior_state(model: &LinearModel, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = model.dim();
    let z = normal_vector(&mut rng, d);
    let chol = symmetric_sqrt(model.prior_cov());
    model.prior_mean() + chol * z
}

/// Symmetric square root via eigendecomposition; tolerates PSD inputs with
/// tiny negative eigenvalues from rounding.
fn symmetric_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}
