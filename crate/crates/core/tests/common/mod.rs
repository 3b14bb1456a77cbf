//! Shared oracles for the integration tests.
//!
//! Everything here is deliberately independent of the library's production
//! paths: the tilt transform is a literal transcription of the double-sum
//! formula on complex dictionaries, binomials are recomputed recursively,
//! and the schedule-gradient oracle propagates covariance sensitivities
//! step by step through the plain filter recursion.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use tiltshift_core::aberration::{enumerate_basis, AberrationVector, Tilt};
use tiltshift_core::model::LinearModel;
use tiltshift_core::schedule::TiltSequence;

/// Recursive binomial coefficient with `C(n, k) = 0` for `k > n`.
fn choose(n: i64, k: i64) -> f64 {
    if k < 0 || k > n {
        return 0.0;
    }
    if k == 0 || k == n {
        return 1.0;
    }
    choose(n - 1, k - 1) + choose(n - 1, k)
}

pub type CoefficientMap = HashMap<(u32, u32), Complex64>;

/// Literal evaluation of the tilt-induced aberration transform on complex
/// coefficient dictionaries: for every output pair `(alpha, gamma)` the full
/// double sum is walked with no precomputation or term reuse.
pub fn brute_force_tilt_transform(
    coefficients: &CoefficientMap,
    t: Complex64,
    max_order: u32,
) -> CoefficientMap {
    let m_max = max_order as i64;
    let mut out = CoefficientMap::new();
    for alpha in 0..=m_max {
        for gamma in 0..=alpha {
            let order = alpha + gamma;
            if order < 1 || order > m_max {
                continue;
            }
            let rho = if alpha == gamma { 0.5 } else { 1.0 };
            let mut acc = Complex64::new(0.0, 0.0);
            for beta in alpha..=m_max {
                let zeta = beta.min(m_max - beta);
                for delta in gamma..=zeta {
                    let m = beta + delta;
                    let n = beta - delta;
                    let c = coefficients
                        .get(&(m as u32, n as u32))
                        .copied()
                        .unwrap_or_else(|| Complex64::new(0.0, 0.0));
                    let k1 = choose(beta, alpha) * choose(delta, gamma);
                    if k1 != 0.0 {
                        acc += k1
                            * t.conj().powi((beta - alpha) as i32)
                            * t.powi((delta - gamma) as i32)
                            * c
                            / m as f64;
                    }
                    let k2 = choose(beta, gamma) * choose(delta, alpha);
                    if k2 != 0.0 {
                        acc += k2
                            * t.conj().powi((delta - alpha) as i32)
                            * t.powi((beta - gamma) as i32)
                            * c.conj()
                            / m as f64;
                    }
                }
            }
            out.insert(
                ((alpha + gamma) as u32, (alpha - gamma) as u32),
                rho * order as f64 * acc,
            );
        }
    }
    out
}

pub fn vector_to_map(v: &AberrationVector) -> CoefficientMap {
    v.basis()
        .indices()
        .iter()
        .map(|&idx| ((idx.order, idx.foldness), v.complex_at(idx).unwrap()))
        .collect()
}

pub fn random_aberration_vector(max_order: u32, rng: &mut ChaCha12Rng) -> AberrationVector {
    let basis = enumerate_basis(max_order).unwrap();
    let values = DVector::from_fn(basis.real_dim(), |_, _| rng.random_range(-2.0..2.0));
    AberrationVector::from_values(basis, values).unwrap()
}

pub fn random_tilt(magnitude: f64, rng: &mut ChaCha12Rng) -> Tilt {
    let r = magnitude * rng.random_range(0.0..1.0f64).sqrt();
    let a = rng.random_range(0.0..std::f64::consts::TAU);
    Tilt::new(r * a.cos(), r * a.sin())
}

pub fn random_feasible_sequence(model: &LinearModel, n: usize, seed: u64) -> TiltSequence {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let bounds: Vec<f64> = (0..n).map(|k| model.tilt_bound(k)).collect();
    let tilts = bounds.iter().map(|&b| random_tilt(b, &mut rng)).collect();
    TiltSequence::new(tilts, bounds).unwrap()
}

/// Gradient of `tr(W P_{N-1|N-1})` by forward sensitivity propagation
/// through the Joseph-form filter recursion, fully independent of the
/// batch factorization used by the production gradient.
pub fn sensitivity_gradient(
    model: &LinearModel,
    weight: &DMatrix<f64>,
    start_prior: &DMatrix<f64>,
    tilts: &[Tilt],
) -> DVector<f64> {
    let n = tilts.len();
    let d = model.dim();
    let a = model.transition();
    let r_full = {
        let mut r = DMatrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                r[(i, j)] = model.measurement_noise()[(i, j)];
            }
        }
        r
    };
    let eye = DMatrix::<f64>::identity(d, d);

    let mut grad = DVector::zeros(2 * n);
    for parameter in 0..2 * n {
        let step_of_parameter = parameter / 2;
        let mut cov = start_prior.clone();
        let mut sensitivity = DMatrix::<f64>::zeros(d, d);
        for (k, &theta) in tilts.iter().enumerate() {
            let c = model.observation(theta);
            let dc = if k == step_of_parameter {
                let (gx, gy) = model.observation_gradient(theta);
                if parameter % 2 == 0 {
                    gx
                } else {
                    gy
                }
            } else {
                DMatrix::zeros(2, d)
            };

            let s = &c * &cov * c.transpose() + &r_full;
            let ds = &dc * &cov * c.transpose()
                + &c * &sensitivity * c.transpose()
                + &c * &cov * dc.transpose();
            let s_inv = s.clone().try_inverse().expect("SPD innovation");
            let gain = &cov * c.transpose() * &s_inv;
            let dgain = (&sensitivity * c.transpose() + &cov * dc.transpose()
                - &gain * &ds)
                * &s_inv;

            let l = &eye - &gain * &c;
            let dl = -(&dgain * &c + &gain * &dc);
            let posterior = &l * &cov * l.transpose() + &gain * &r_full * gain.transpose();
            let dposterior = &dl * &cov * l.transpose()
                + &l * &sensitivity * l.transpose()
                + &l * &cov * dl.transpose()
                + &dgain * &r_full * gain.transpose()
                + &gain * &r_full * dgain.transpose();

            if k + 1 < n {
                cov = a * &posterior * a.transpose() + model.process_noise();
                sensitivity = a * &dposterior * a.transpose();
            } else {
                cov = posterior;
                sensitivity = dposterior;
            }
        }
        grad[parameter] = (weight * &sensitivity).trace();
    }
    grad
}
