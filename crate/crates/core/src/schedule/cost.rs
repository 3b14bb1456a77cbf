//! Schedule cost and its exact gradient.
//!
//! Cost: `tr(W P+)` with `P+ = P- - U Sigma^-1 U^T` from the batch
//! correction (`U = Cov(x_end, Y)`, `Sigma = Cov(Y)`). The tilts enter only
//! through the per-step observation matrices `C_j`, so differentiating with
//! respect to one scalar tilt component of step `j` gives
//!
//! ```text
//! dP+ = -dU Sigma^-1 U^T + U Sigma^-1 dSigma Sigma^-1 U^T - U Sigma^-1 dU^T
//! dcost = -2 <dC_j E_j, X_j> + 2 <H_j, dC_j S_j>
//! ```
//!
//! with the Frobenius pairings over the single nonzero blocks:
//!
//! ```text
//! E_j = P_j Phi_j^T                      (propagates dC_j into dU)
//! X   = Sigma^-1 U^T W,   X_j its rows 2j..2j+2
//! H   = Sigma^-1 U^T W U Sigma^-1,  H_j its rows 2j..2j+2
//! S_j = [Cov(x_j, x_m) C_m^T]_m          (row block j of dSigma)
//! ```
//!
//! Every factor is shared across the 2N parameters, so one factorization
//! serves the whole gradient. Correctness is pinned by central finite
//! differences and by an independent forward-sensitivity recursion in the
//! test suite.

use nalgebra::{DMatrix, DVector};

use super::{ScheduleObjective, TiltSequence};
use crate::error::{Error, Result};
use crate::estimate::{batch_correction_with, forward_kernel, ForwardKernel};

/// `tr(W P_{N-1|N-1})` for a feasible sequence.
pub fn schedule_cost(objective: &ScheduleObjective, sequence: &TiltSequence) -> Result<f64> {
    let kernel = forward_kernel(
        objective.model(),
        objective.start_prior_cov(),
        sequence.len(),
    )?;
    cost_with_kernel(objective, &kernel, sequence)
}

/// Exact gradient of [`schedule_cost`] with respect to the `2N` scalar tilt
/// components, ordered `(tx_0, ty_0, tx_1, ty_1, ...)`.
pub fn schedule_gradient(
    objective: &ScheduleObjective,
    sequence: &TiltSequence,
) -> Result<DVector<f64>> {
    Ok(schedule_cost_and_gradient(objective, sequence)?.1)
}

/// Cost and gradient from one shared factorization.
pub fn schedule_cost_and_gradient(
    objective: &ScheduleObjective,
    sequence: &TiltSequence,
) -> Result<(f64, DVector<f64>)> {
    let kernel = forward_kernel(
        objective.model(),
        objective.start_prior_cov(),
        sequence.len(),
    )?;
    cost_and_gradient_with_kernel(objective, &kernel, sequence)
}

/// Cost only, against a precomputed forward kernel.
pub(crate) fn cost_with_kernel(
    objective: &ScheduleObjective,
    kernel: &ForwardKernel,
    sequence: &TiltSequence,
) -> Result<f64> {
    let correction = batch_correction_with(objective.model(), kernel, sequence.tilts())?;
    Ok((objective.weight() * &correction.posterior).trace())
}

/// Cost and gradient against a precomputed forward kernel.
pub(crate) fn cost_and_gradient_with_kernel(
    objective: &ScheduleObjective,
    kernel: &ForwardKernel,
    sequence: &TiltSequence,
) -> Result<(f64, DVector<f64>)> {
    let model = objective.model();
    let tilts = sequence.tilts();
    let n = tilts.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty tilt sequence".into()));
    }
    let weight = objective.weight();
    let correction = batch_correction_with(model, kernel, tilts)?;
    let cost = (weight * &correction.posterior).trace();

    let u_t = correction.cross.transpose(); // 2N x d
    let y = correction.sigma.solve(&u_t); // Sigma^-1 U^T
    let x = &y * weight; // Sigma^-1 U^T W
    let h = &y * weight * y.transpose(); // 2N x 2N

    let a = model.transition();
    let at = a.transpose();

    // S_j blocks for m < j: A^(j-m) rows_m^T, maintained incrementally.
    let mut left_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut grad = DVector::zeros(2 * n);

    for (j, &theta) in tilts.iter().enumerate() {
        for block in left_blocks.iter_mut() {
            *block = a * &*block;
        }
        if j > 0 {
            left_blocks.push(a * correction.rows[j - 1].transpose());
            debug_assert_eq!(left_blocks.len(), j);
        }

        // S_j: d x 2N row block of dSigma's kernel.
        let d = model.dim();
        let mut s_j = DMatrix::zeros(d, 2 * n);
        for (m, block) in left_blocks.iter().enumerate() {
            s_j.columns_mut(2 * m, 2).copy_from(block);
        }
        s_j.columns_mut(2 * j, 2)
            .copy_from(&correction.rows[j].transpose());
        let mut prop = kernel.priors[j].clone();
        for m in j + 1..n {
            prop *= &at;
            s_j.columns_mut(2 * m, 2)
                .copy_from(&(&prop * correction.observations[m].transpose()));
        }

        let e_j = &kernel.priors[j] * kernel.forward_maps[j].transpose();
        let x_j = x.rows(2 * j, 2);
        let h_j = h.rows(2 * j, 2);

        let (gx, gy) = model.observation_gradient(theta);
        for (comp, dc) in [gx, gy].iter().enumerate() {
            let du_term = frobenius(&(dc * &e_j), &x_j.clone_owned());
            let dsigma_term = frobenius(&h_j.clone_owned(), &(dc * &s_j));
            grad[2 * j + comp] = -2.0 * du_term + 2.0 * dsigma_term;
        }
    }
    Ok((cost, grad))
}

fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Fast path for the local solver
// ---------------------------------------------------------------------------
//
// Inside the optimizer the cost is evaluated thousands of times and only
// needs to rank candidate sequences; relative noise around 1e-8 is
// harmless there, while the compensated path's exactness matters for the
// public evaluators (finite-difference pinning, batch/recursive
// equivalence). This plain-f64 evaluation implements the identical
// mathematics on the same shared kernel.

pub(crate) struct FastEvaluation {
    pub cost: f64,
    pub gradient: Option<DVector<f64>>,
}

pub(crate) fn fast_evaluate_with_kernel(
    objective: &ScheduleObjective,
    kernel: &ForwardKernel,
    sequence: &TiltSequence,
    with_gradient: bool,
) -> Result<FastEvaluation> {
    let model = objective.model();
    let tilts = sequence.tilts();
    let n = tilts.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty tilt sequence".into()));
    }
    let weight = objective.weight();
    let d = model.dim();
    let r = model.measurement_noise();
    let at = model.transition().transpose();

    let observations: Vec<DMatrix<f64>> =
        tilts.iter().map(|&theta| model.observation(theta)).collect();
    let rows: Vec<DMatrix<f64>> = (0..n)
        .map(|i| &observations[i] * &kernel.priors[i])
        .collect();

    let mut sigma = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let own = &rows[i] * observations[i].transpose();
        for aa in 0..2 {
            for bb in 0..2 {
                sigma[(2 * i + aa, 2 * i + bb)] = own[(aa, bb)] + r[(aa, bb)];
            }
        }
        if i + 1 < n {
            let mut prop = &rows[i] * &at;
            for m in i + 1..n {
                let block = &prop * observations[m].transpose();
                for aa in 0..2 {
                    for bb in 0..2 {
                        sigma[(2 * i + aa, 2 * m + bb)] = block[(aa, bb)];
                        sigma[(2 * m + bb, 2 * i + aa)] = block[(aa, bb)];
                    }
                }
                if m + 1 < n {
                    prop *= &at;
                }
            }
        }
    }

    let mut cross = DMatrix::zeros(d, 2 * n);
    for i in 0..n {
        cross
            .columns_mut(2 * i, 2)
            .copy_from(&(&kernel.forward_maps[i] * rows[i].transpose()));
    }

    // Equilibrated Cholesky in plain f64.
    let mut inv_scale = DVector::zeros(2 * n);
    for i in 0..2 * n {
        let v = sigma[(i, i)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::IllConditionedSchedule(
                "batch measurement covariance failed to factorize".into(),
            ));
        }
        inv_scale[i] = 1.0 / v.sqrt();
    }
    let scaled = DMatrix::from_fn(2 * n, 2 * n, |i, j| sigma[(i, j)] * inv_scale[i] * inv_scale[j]);
    let chol = scaled.cholesky().ok_or_else(|| {
        Error::IllConditionedSchedule("batch measurement covariance failed to factorize".into())
    })?;
    let solve = |rhs: &DMatrix<f64>| -> DMatrix<f64> {
        let mut scaled_rhs = rhs.clone();
        for i in 0..rhs.nrows() {
            let s = inv_scale[i];
            for j in 0..rhs.ncols() {
                scaled_rhs[(i, j)] *= s;
            }
        }
        let mut out = chol.solve(&scaled_rhs);
        for i in 0..out.nrows() {
            let s = inv_scale[i];
            for j in 0..out.ncols() {
                out[(i, j)] *= s;
            }
        }
        out
    };

    let u_t = cross.transpose();
    let y = solve(&u_t); // Sigma^-1 U^T
    let posterior = &kernel.priors[n - 1] - &cross * &y;
    let cost = (weight * &posterior).trace();

    if !with_gradient {
        return Ok(FastEvaluation {
            cost,
            gradient: None,
        });
    }

    let x = &y * weight;
    let h = &y * weight * y.transpose();
    let mut left_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let a = model.transition();
    let mut grad = DVector::zeros(2 * n);
    for (j, &theta) in tilts.iter().enumerate() {
        for block in left_blocks.iter_mut() {
            *block = a * &*block;
        }
        if j > 0 {
            left_blocks.push(a * rows[j - 1].transpose());
        }
        let mut s_j = DMatrix::zeros(d, 2 * n);
        for (m, block) in left_blocks.iter().enumerate() {
            s_j.columns_mut(2 * m, 2).copy_from(block);
        }
        s_j.columns_mut(2 * j, 2).copy_from(&rows[j].transpose());
        let mut prop = kernel.priors[j].clone();
        for m in j + 1..n {
            prop *= &at;
            s_j.columns_mut(2 * m, 2)
                .copy_from(&(&prop * observations[m].transpose()));
        }

        let e_j = &kernel.priors[j] * kernel.forward_maps[j].transpose();
        let x_j = x.rows(2 * j, 2);
        let h_j = h.rows(2 * j, 2);
        let (gx, gy) = model.observation_gradient(theta);
        for (comp, dc) in [gx, gy].iter().enumerate() {
            let du_term = frobenius(&(dc * &e_j), &x_j.clone_owned());
            let dsigma_term = frobenius(&h_j.clone_owned(), &(dc * &s_j));
            grad[2 * j + comp] = -2.0 * du_term + 2.0 * dsigma_term;
        }
    }
    Ok(FastEvaluation {
        cost,
        gradient: Some(grad),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aberration::Tilt;
    use crate::estimate::batch_posterior_cov;
    use crate::model::{build_model, LinearModel, ModelConfig};
    use crate::schedule::uniform_weight;
    use nalgebra::DMatrix;
    use rand::RngExt;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn default_model(max_order: u32) -> LinearModel {
        build_model(&ModelConfig::new(max_order, 2, 1.0).unwrap()).unwrap()
    }

    fn random_sequence(model: &LinearModel, n: usize, seed: u64) -> TiltSequence {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let bounds: Vec<f64> = (0..n).map(|k| model.tilt_bound(k)).collect();
        let tilts = bounds
            .iter()
            .map(|&b| {
                let r = b * rng.random_range(0.0..1.0f64).sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Tilt::new(r * a.cos(), r * a.sin())
            })
            .collect();
        TiltSequence::new(tilts, bounds).unwrap()
    }

    #[test]
    fn cost_agrees_with_batch_posterior() {
        let model = default_model(2);
        let seq = random_sequence(&model, 12, 3);
        let objective = ScheduleObjective::new(&model, uniform_weight(&model)).unwrap();
        let cost = schedule_cost(&objective, &seq).unwrap();
        let posterior = batch_posterior_cov(&model, seq.tilts()).unwrap();
        let direct = (uniform_weight(&model) * posterior).trace();
        assert!((cost - direct).abs() < 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn zero_weight_means_zero_cost_and_gradient() {
        let model = default_model(2);
        let seq = random_sequence(&model, 8, 4);
        let d = model.dim();
        let objective = ScheduleObjective::new(&model, DMatrix::zeros(d, d)).unwrap();
        let (cost, grad) = schedule_cost_and_gradient(&objective, &seq).unwrap();
        assert_eq!(cost, 0.0);
        assert_eq!(grad.amax(), 0.0);
    }

    #[test]
    fn unexcited_slot_keeps_prior_variance_in_cost() {
        // Weight selecting only c20 with all-zero tilts: no information.
        let model = default_model(2);
        let d = model.dim();
        let mut weight = DMatrix::zeros(d, d);
        weight[(2, 2)] = 1.0;
        let objective = ScheduleObjective::new(&model, weight).unwrap();
        let n = 10;
        let seq =
            TiltSequence::new(vec![Tilt::default(); n], vec![model.tilt_bound(0); n]).unwrap();
        let cost = schedule_cost(&objective, &seq).unwrap();
        // prior variance plus accumulated process noise
        let q = model.process_noise()[(2, 2)];
        let expected = 1.0 + (n - 1) as f64 * q;
        assert!((cost - expected).abs() < 1e-10, "cost {cost}");
    }

    #[test]
    fn random_tilts_beat_zero_tilts() {
        let model = default_model(4);
        let objective = ScheduleObjective::new(&model, uniform_weight(&model)).unwrap();
        let n = 60;
        let zero =
            TiltSequence::new(vec![Tilt::default(); n], model.bounds().bounds(n)).unwrap();
        let random = random_sequence(&model, n, 5);
        let cost_zero = schedule_cost(&objective, &zero).unwrap();
        let cost_random = schedule_cost(&objective, &random).unwrap();
        assert!(
            cost_random < cost_zero,
            "random {cost_random} vs zero {cost_zero}"
        );
    }

    #[test]
    fn gradient_matches_finite_differences_on_a_small_problem() {
        let model = default_model(2);
        let objective = ScheduleObjective::new(&model, uniform_weight(&model)).unwrap();
        let seq = random_sequence(&model, 6, 11);
        let grad = schedule_gradient(&objective, &seq).unwrap();
        let h = 1e-6;
        for p in 0..2 * seq.len() {
            let mut plus = seq.tilts().to_vec();
            let mut minus = seq.tilts().to_vec();
            if p % 2 == 0 {
                plus[p / 2].tx += h;
                minus[p / 2].tx -= h;
            } else {
                plus[p / 2].ty += h;
                minus[p / 2].ty -= h;
            }
            let inflated: Vec<f64> = seq.bounds().iter().map(|b| b + 1.0).collect();
            let f_plus = schedule_cost(
                &objective,
                &TiltSequence::new(plus, inflated.clone()).unwrap(),
            )
            .unwrap();
            let f_minus =
                schedule_cost(&objective, &TiltSequence::new(minus, inflated).unwrap()).unwrap();
            let fd = (f_plus - f_minus) / (2.0 * h);
            let denom = fd.abs().max(1e-6 * grad.amax().max(1e-30));
            assert!(
                (grad[p] - fd).abs() / denom < 1e-5,
                "component {p}: analytic {} vs fd {fd}",
                grad[p]
            );
        }
    }

    #[test]
    fn cost_is_deterministic() {
        // The objective never sees measurements; evaluating twice is
        // bit-identical.
        let model = default_model(2);
        let objective = ScheduleObjective::new(&model, uniform_weight(&model)).unwrap();
        let seq = random_sequence(&model, 10, 21);
        let a = schedule_cost(&objective, &seq).unwrap();
        let b = schedule_cost(&objective, &seq).unwrap();
        assert_eq!(a, b);
    }
}
