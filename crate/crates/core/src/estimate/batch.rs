//! Batch N-step covariance prediction and correction.
//!
//! With an invertible transition matrix, all N measurements can be fused
//! against the N-step predicted covariance in one correction:
//!
//! ```text
//! P- = A^(N-1) P0 A^T^(N-1) + sum_i A^i Q A^T^i
//! P+ = P- - U Sigma^-1 U^T
//! ```
//!
//! where `Sigma = Cov(Y)` is the joint covariance of the stacked
//! measurements and `U = Cov(x_{N-1}, Y)` the cross covariance with the
//! horizon-end state. Both are assembled from the forward process:
//!
//! ```text
//! Sigma[i, j] = C_i Cov(x_i, x_j) C_j^T + delta_ij R,
//! Cov(x_i, x_j) = P_i A^T^(j-i)  (i <= j),   U[:, i] = A^(N-1-i) P_i C_i^T,
//! ```
//!
//! with `P_i` the unconditional (i-step predicted) covariance. When the
//! process noise is zero this collapses to the lifted-observation form
//! `Sigma = Cbar P- Cbar^T + I (x) R` with `Cbar` from
//! [`lifted_observation`]; with process noise the forward kernel keeps the
//! correction exactly equal to the recursive filter, which is what lets the
//! offline optimizer and the online filter score a schedule identically.
//!
//! Numerically this one-shot correction is far harsher than the recursion:
//! drift states make consecutive measurements nearly collinear
//! (cond(Sigma) beyond 1e12) and `P-` exceeds the posterior by six orders
//! of magnitude, so a plain f64 pipeline loses the answer to cancellation.
//! The assembly, the equilibrated Cholesky factorization, the triangular
//! solves, and the final subtraction therefore all run in compensated
//! double-double arithmetic; only the rounded result leaves this module.

use nalgebra::{DMatrix, DVector};

use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// `P_{N-1|-1}` from an arbitrary starting prior, accumulated by iterating
/// the prediction (never by explicit matrix powers).
pub fn batch_predicted_cov_from(
    model: &LinearModel,
    prior_cov: &DMatrix<f64>,
    n: usize,
) -> Result<DMatrix<f64>> {
    if n < 1 {
        return Err(Error::InvalidArgument("horizon must be >= 1".into()));
    }
    let a = model.transition();
    let mut cov = prior_cov.clone();
    for _ in 0..n - 1 {
        cov = a * cov * a.transpose() + model.process_noise();
        let t = cov.transpose();
        cov += t;
        cov *= 0.5;
    }
    Ok(cov)
}

/// `P_{N-1|-1}` from the model prior.
pub fn batch_predicted_cov(model: &LinearModel, n: usize) -> Result<DMatrix<f64>> {
    batch_predicted_cov_from(model, model.prior_cov(), n)
}

/// The lifted observation matrix together with the per-block state maps
/// `A^-(N-1-i)`.
#[derive(Debug, Clone)]
pub struct LiftedObservation {
    /// 2N x d stack of `C(theta_i) A^-(N-1-i)`.
    pub stacked: DMatrix<f64>,
    /// `state_maps[i] = A^-(N-1-i)`, so `state_maps[N-1]` is the identity.
    pub state_maps: Vec<DMatrix<f64>>,
}

/// Builds the lifted observation matrix mapping the horizon-end state to
/// every measurement. Powers of the inverse transition are accumulated by
/// repeated solves against `A` rather than by inverting once and powering.
pub fn lifted_observation(model: &LinearModel, tilts: &[Tilt]) -> Result<LiftedObservation> {
    let n = tilts.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty tilt sequence".into()));
    }
    let d = model.dim();
    let lu_at = model.transition().transpose().clone_owned().lu();

    let mut state_maps = vec![DMatrix::<f64>::identity(d, d); n];
    for i in (0..n.saturating_sub(1)).rev() {
        // state_maps[i] = state_maps[i+1] * A^-1, via A^T X^T = M^T.
        let solved = lu_at
            .solve(&state_maps[i + 1].transpose())
            .ok_or_else(|| Error::InvalidArgument("transition matrix is singular".into()))?;
        state_maps[i] = solved.transpose();
    }

    let mut stacked = DMatrix::zeros(2 * n, d);
    for (i, &theta) in tilts.iter().enumerate() {
        let block = model.observation(theta) * &state_maps[i];
        stacked.rows_mut(2 * i, 2).copy_from(&block);
    }
    Ok(LiftedObservation {
        stacked,
        state_maps,
    })
}

// ---------------------------------------------------------------------------
// Compensated (double-double) arithmetic
// ---------------------------------------------------------------------------

/// Unevaluated sum of two f64 giving roughly 32 significant digits.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct TwoFloat {
    hi: f64,
    lo: f64,
}

impl TwoFloat {
    const ZERO: TwoFloat = TwoFloat { hi: 0.0, lo: 0.0 };

    fn new(v: f64) -> Self {
        TwoFloat { hi: v, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        TwoFloat { hi: s, lo: err }
    }

    fn quick_two_sum(a: f64, b: f64) -> Self {
        let s = a + b;
        TwoFloat {
            hi: s,
            lo: b - (s - a),
        }
    }

    fn two_prod(a: f64, b: f64) -> Self {
        let p = a * b;
        TwoFloat {
            hi: p,
            lo: a.mul_add(b, -p),
        }
    }

    fn add(self, other: TwoFloat) -> Self {
        let s = Self::two_sum(self.hi, other.hi);
        let lo = self.lo + other.lo + s.lo;
        Self::quick_two_sum(s.hi, lo)
    }

    fn neg(self) -> Self {
        TwoFloat {
            hi: -self.hi,
            lo: -self.lo,
        }
    }

    fn sub(self, other: TwoFloat) -> Self {
        self.add(other.neg())
    }

    fn mul(self, other: TwoFloat) -> Self {
        let p = Self::two_prod(self.hi, other.hi);
        let lo = p.lo + self.hi * other.lo + self.lo * other.hi;
        Self::quick_two_sum(p.hi, lo)
    }

    fn div(self, other: TwoFloat) -> Self {
        let q1 = self.hi / other.hi;
        let r = self.sub(other.mul(TwoFloat::new(q1)));
        let q2 = r.hi / other.hi;
        let r2 = r.sub(other.mul(TwoFloat::new(q2)));
        let q3 = r2.hi / other.hi;
        Self::quick_two_sum(q1, q2).add(TwoFloat::new(q3))
    }

    fn sqrt(self) -> Option<Self> {
        if self.hi < 0.0 {
            return None;
        }
        if self.hi == 0.0 {
            return (self.lo <= 0.0).then_some(Self::ZERO);
        }
        let y = self.hi.sqrt();
        let residual = self.sub(Self::two_prod(y, y));
        Some(Self::quick_two_sum(y, residual.hi / (2.0 * y)))
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Dense double-double matrix, column major.
pub(crate) struct TwoFloatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<TwoFloat>,
}

impl TwoFloatMatrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![TwoFloat::ZERO; rows * cols],
        }
    }

    fn from_f64(m: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(m.nrows(), m.ncols());
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                out.set(i, j, TwoFloat::new(m[(i, j)]));
            }
        }
        out
    }

    fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out.set(i, i, TwoFloat::new(1.0));
        }
        out
    }

    fn get(&self, i: usize, j: usize) -> TwoFloat {
        self.data[j * self.rows + i]
    }

    fn set(&mut self, i: usize, j: usize, v: TwoFloat) {
        self.data[j * self.rows + i] = v;
    }

    fn matmul(&self, other: &TwoFloatMatrix) -> TwoFloatMatrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = TwoFloatMatrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for i in 0..self.rows {
                let mut acc = TwoFloat::ZERO;
                for k in 0..self.cols {
                    acc = acc.add(self.get(i, k).mul(other.get(k, j)));
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// `self * other^T` with an f64 right factor promoted on the fly.
    fn matmul_f64_transposed(&self, other: &DMatrix<f64>) -> TwoFloatMatrix {
        debug_assert_eq!(self.cols, other.ncols());
        let mut out = TwoFloatMatrix::zeros(self.rows, other.nrows());
        for j in 0..other.nrows() {
            for i in 0..self.rows {
                let mut acc = TwoFloat::ZERO;
                for k in 0..self.cols {
                    acc = acc.add(self.get(i, k).mul(TwoFloat::new(other[(j, k)])));
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    fn transpose(&self) -> TwoFloatMatrix {
        let mut out = TwoFloatMatrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    fn add_f64_inplace(&mut self, m: &DMatrix<f64>) {
        debug_assert_eq!((self.rows, self.cols), m.shape());
        for j in 0..self.cols {
            for i in 0..self.rows {
                self.set(i, j, self.get(i, j).add(TwoFloat::new(m[(i, j)])));
            }
        }
    }

    fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).value())
    }
}

/// Cholesky factorization in double-double arithmetic after two-sided
/// diagonal equilibration.
pub(crate) struct ScaledCholesky {
    factor: TwoFloatMatrix,
    inv_scale: DVector<f64>,
}

impl ScaledCholesky {
    fn new(sigma: &TwoFloatMatrix) -> Option<Self> {
        let n = sigma.rows;
        let mut inv_scale = DVector::zeros(n);
        for i in 0..n {
            let d = sigma.get(i, i).value();
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            inv_scale[i] = 1.0 / d.sqrt();
        }

        let mut factor = TwoFloatMatrix::zeros(n, n);
        for j in 0..n {
            let sjj = TwoFloat::new(inv_scale[j]);
            let mut acc = sigma.get(j, j).mul(sjj).mul(sjj);
            for k in 0..j {
                let l = factor.get(j, k);
                acc = acc.sub(l.mul(l));
            }
            let diag = acc.sqrt()?;
            if diag.hi <= 0.0 {
                return None;
            }
            factor.set(j, j, diag);
            for i in j + 1..n {
                let mut acc = sigma
                    .get(i, j)
                    .mul(TwoFloat::new(inv_scale[i]))
                    .mul(sjj);
                for k in 0..j {
                    acc = acc.sub(factor.get(i, k).mul(factor.get(j, k)));
                }
                factor.set(i, j, acc.div(diag));
            }
        }
        Some(Self { factor, inv_scale })
    }

    /// `Sigma^-1 rhs` in double-double.
    fn solve_dd(&self, rhs: &TwoFloatMatrix) -> TwoFloatMatrix {
        let n = self.factor.rows;
        let m = rhs.cols;
        let mut work = TwoFloatMatrix::zeros(n, m);
        for j in 0..m {
            for i in 0..n {
                let mut acc = rhs.get(i, j).mul(TwoFloat::new(self.inv_scale[i]));
                for k in 0..i {
                    acc = acc.sub(self.factor.get(i, k).mul(work.get(k, j)));
                }
                work.set(i, j, acc.div(self.factor.get(i, i)));
            }
            for i in (0..n).rev() {
                let mut acc = work.get(i, j);
                for k in i + 1..n {
                    acc = acc.sub(self.factor.get(k, i).mul(work.get(k, j)));
                }
                work.set(i, j, acc.div(self.factor.get(i, i)));
            }
            for i in 0..n {
                work.set(i, j, work.get(i, j).mul(TwoFloat::new(self.inv_scale[i])));
            }
        }
        work
    }

    /// `Sigma^-1 rhs`, rounded to f64.
    pub(crate) fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.solve_dd(&TwoFloatMatrix::from_f64(rhs)).to_f64()
    }
}

/// Tilt-independent part of the batch correction: the forward prior
/// covariances and the forward transition powers. During schedule
/// optimization the horizon and starting prior are fixed while thousands of
/// tilt sequences are scored, so this is built once and shared.
pub(crate) struct ForwardKernel {
    at_dd: TwoFloatMatrix,
    priors_dd: Vec<TwoFloatMatrix>,
    maps_dd: Vec<TwoFloatMatrix>,
    /// Rounded copies for the gradient algebra.
    pub priors: Vec<DMatrix<f64>>,
    pub forward_maps: Vec<DMatrix<f64>>,
}

pub(crate) fn forward_kernel(
    model: &LinearModel,
    prior_cov: &DMatrix<f64>,
    n: usize,
) -> Result<ForwardKernel> {
    if n == 0 {
        return Err(Error::InvalidArgument("empty tilt sequence".into()));
    }
    let a_dd = TwoFloatMatrix::from_f64(model.transition());
    let at_dd = a_dd.transpose();

    let mut priors_dd = Vec::with_capacity(n);
    priors_dd.push(TwoFloatMatrix::from_f64(prior_cov));
    for i in 1..n {
        let mut next = a_dd.matmul(&priors_dd[i - 1]).matmul(&at_dd);
        next.add_f64_inplace(model.process_noise());
        priors_dd.push(next);
    }

    let mut maps_dd: Vec<TwoFloatMatrix> = Vec::with_capacity(n);
    maps_dd.push(TwoFloatMatrix::identity(model.dim()));
    for _ in 1..n {
        maps_dd.push(a_dd.matmul(maps_dd.last().unwrap()));
    }
    maps_dd.reverse(); // maps_dd[i] = A^(N-1-i)

    Ok(ForwardKernel {
        priors: priors_dd.iter().map(|p| p.to_f64()).collect(),
        forward_maps: maps_dd.iter().map(|m| m.to_f64()).collect(),
        at_dd,
        priors_dd,
        maps_dd,
    })
}

/// Tilt-dependent part of the batch correction.
pub(crate) struct BatchCorrection {
    /// `P_{N-1|N-1}`.
    pub posterior: DMatrix<f64>,
    /// Cross covariance `Cov(x_{N-1}, Y)`, d x 2N.
    pub cross: DMatrix<f64>,
    /// Factorized `Cov(Y)`.
    pub sigma: ScaledCholesky,
    /// `C_i P_i` rows, 2 x d per step.
    pub rows: Vec<DMatrix<f64>>,
    /// `C(theta_i)` per step.
    pub observations: Vec<DMatrix<f64>>,
}

pub(crate) fn batch_correction_with(
    model: &LinearModel,
    kernel: &ForwardKernel,
    tilts: &[Tilt],
) -> Result<BatchCorrection> {
    let n = tilts.len();
    if n == 0 || kernel.priors_dd.len() != n {
        return Err(Error::InvalidArgument(
            "kernel and tilt sequence lengths differ".into(),
        ));
    }
    let r = model.measurement_noise();
    let d = model.dim();

    let observations: Vec<DMatrix<f64>> =
        tilts.iter().map(|&theta| model.observation(theta)).collect();

    // rows_i = C_i P_i, carried in double-double: the Gram entries feed the
    // near-singular directions of Sigma, where plain-f64 assembly costs
    // several digits of the final correction.
    let rows_dd: Vec<TwoFloatMatrix> = (0..n)
        .map(|i| TwoFloatMatrix::from_f64(&observations[i]).matmul(&kernel.priors_dd[i]))
        .collect();

    let mut sigma = TwoFloatMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        let own = rows_dd[i].matmul_f64_transposed(&observations[i]);
        for aa in 0..2 {
            for bb in 0..2 {
                sigma.set(
                    2 * i + aa,
                    2 * i + bb,
                    own.get(aa, bb).add(TwoFloat::new(r[(aa, bb)])),
                );
            }
        }
        if i + 1 < n {
            let mut prop = rows_dd[i].matmul(&kernel.at_dd); // C_i P_i A^T
            for m in i + 1..n {
                let block = prop.matmul_f64_transposed(&observations[m]);
                for aa in 0..2 {
                    for bb in 0..2 {
                        sigma.set(2 * i + aa, 2 * m + bb, block.get(aa, bb));
                        sigma.set(2 * m + bb, 2 * i + aa, block.get(aa, bb));
                    }
                }
                if m + 1 < n {
                    prop = prop.matmul(&kernel.at_dd);
                }
            }
        }
    }

    let mut cross_dd = TwoFloatMatrix::zeros(d, 2 * n);
    for i in 0..n {
        let block = kernel.maps_dd[i].matmul(&rows_dd[i].transpose()); // d x 2
        for aa in 0..d {
            for bb in 0..2 {
                cross_dd.set(aa, 2 * i + bb, block.get(aa, bb));
            }
        }
    }

    let chol = ScaledCholesky::new(&sigma).ok_or_else(|| {
        Error::IllConditionedSchedule("batch measurement covariance failed to factorize".into())
    })?;

    // P+ = P- - U Sigma^-1 U^T, combined before any rounding.
    let solved = chol.solve_dd(&cross_dd.transpose());
    let correction = cross_dd.matmul(&solved);
    let predicted_dd = &kernel.priors_dd[n - 1];
    let mut posterior = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            posterior[(i, j)] = predicted_dd.get(i, j).sub(correction.get(i, j)).value();
        }
    }
    let t = posterior.transpose();
    posterior += t;
    posterior *= 0.5;

    Ok(BatchCorrection {
        posterior,
        cross: cross_dd.to_f64(),
        sigma: chol,
        rows: rows_dd.iter().map(|r| r.to_f64()).collect(),
        observations,
    })
}

pub(crate) fn batch_correction(
    model: &LinearModel,
    prior_cov: &DMatrix<f64>,
    tilts: &[Tilt],
) -> Result<BatchCorrection> {
    let kernel = forward_kernel(model, prior_cov, tilts.len())?;
    batch_correction_with(model, &kernel, tilts)
}

/// `P_{N-1|N-1}` by the single batch correction, from an arbitrary prior.
pub fn batch_posterior_cov_from(
    model: &LinearModel,
    prior_cov: &DMatrix<f64>,
    tilts: &[Tilt],
) -> Result<DMatrix<f64>> {
    Ok(batch_correction(model, prior_cov, tilts)?.posterior)
}

/// `P_{N-1|N-1}` from the model prior.
pub fn batch_posterior_cov(model: &LinearModel, tilts: &[Tilt]) -> Result<DMatrix<f64>> {
    batch_posterior_cov_from(model, model.prior_cov(), tilts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::{covariance_recursion, kf_update, FilterState};
    use crate::model::{build_model, ModelConfig};
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector2;

    fn default_model(max_order: u32, drift_order: usize) -> LinearModel {
        build_model(&ModelConfig::new(max_order, drift_order, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn two_float_arithmetic_recovers_tiny_differences() {
        let a = TwoFloat::new(1.0).add(TwoFloat::new(1e-20));
        let b = a.sub(TwoFloat::new(1.0));
        assert!((b.value() - 1e-20).abs() < 1e-32);
        let q = TwoFloat::new(1.0).div(TwoFloat::new(3.0));
        let back = q.mul(TwoFloat::new(3.0));
        assert!((back.value() - 1.0).abs() < 1e-30);
        let s = TwoFloat::new(2.0).sqrt().unwrap();
        assert!((s.mul(s).value() - 2.0).abs() < 1e-30);
    }

    #[test]
    fn one_step_prediction_is_the_prior() {
        let model = default_model(2, 2);
        let p = batch_predicted_cov(&model, 1).unwrap();
        assert_eq!(&p, model.prior_cov());
    }

    #[test]
    fn identity_dynamics_accumulate_process_noise() {
        let mut config = ModelConfig::new(2, 0, 1.0).unwrap();
        let q = 0.01;
        config.process_noise_diag = vec![q; config.process_noise_diag.len()];
        let model = build_model(&config).unwrap();
        let n = 12;
        let p = batch_predicted_cov(&model, n).unwrap();
        let d = model.dim();
        let expected = DMatrix::<f64>::identity(d, d) * (1.0 + (n - 1) as f64 * q);
        assert_abs_diff_eq!((p - expected).amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn batch_prediction_matches_repeated_kf_predict() {
        let model = default_model(4, 2);
        let n = 60;
        let batch = batch_predicted_cov(&model, n).unwrap();
        let mut state = FilterState::initial(&model);
        for _ in 0..n - 1 {
            state = crate::estimate::kf_predict(&state, &model);
        }
        let rel = (&batch - &state.cov).norm() / state.cov.norm();
        assert!(rel < 1e-9, "relative error {rel}");
    }

    #[test]
    fn single_step_batch_equals_recursive_update() {
        let model = default_model(2, 2);
        let theta = Tilt::new(0.0, 0.0);
        let batch = batch_posterior_cov(&model, &[theta]).unwrap();
        let recursive = kf_update(
            &FilterState::initial(&model),
            &model,
            theta,
            &Vector2::new(0.0, 0.0),
        )
        .unwrap();
        let rel = (&batch - &recursive.cov).norm() / recursive.cov.norm();
        assert!(rel < 1e-10, "relative error {rel}");
    }

    #[test]
    fn batch_equals_recursion_on_a_long_random_sequence() {
        use rand::RngExt;
        use rand::SeedableRng;
        let model = default_model(4, 2);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
        let tilts: Vec<Tilt> = (0..60)
            .map(|k| {
                let bound = model.tilt_bound(k);
                let r = bound * rng.random_range(0.0..1.0f64).sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                Tilt::new(r * a.cos(), r * a.sin())
            })
            .collect();
        let batch = batch_posterior_cov(&model, &tilts).unwrap();
        let recursion = covariance_recursion(&model, &tilts, None).unwrap();
        let last = recursion.posterior.last().unwrap();
        let rel = (&batch - last).norm() / last.norm();
        assert!(rel < 1e-8, "relative Frobenius error {rel}");
    }

    #[test]
    fn batch_reduces_to_lifted_form_without_process_noise() {
        // With zero process noise the forward kernel and the
        // lifted-observation formula coincide analytically; the lifted
        // evaluation below runs in plain f64, so the comparison tolerance
        // reflects its conditioning rather than the batch path's.
        let mut config = ModelConfig::new(2, 2, 1.0).unwrap();
        config.process_noise_diag = vec![0.0; config.process_noise_diag.len()];
        let model = build_model(&config).unwrap();
        let tilts: Vec<Tilt> = (0..10)
            .map(|k| Tilt::new(2e-3 * (k as f64 * 0.9).cos(), 2e-3 * (k as f64 * 0.4).sin()))
            .collect();
        let n = tilts.len();

        let exact = batch_posterior_cov(&model, &tilts).unwrap();

        let predicted = batch_predicted_cov(&model, n).unwrap();
        let lifted = lifted_observation(&model, &tilts).unwrap();
        let gp = &lifted.stacked * &predicted;
        let mut sigma = &gp * lifted.stacked.transpose();
        let r = model.measurement_noise();
        for i in 0..n {
            for aa in 0..2 {
                for bb in 0..2 {
                    sigma[(2 * i + aa, 2 * i + bb)] += r[(aa, bb)];
                }
            }
        }
        let chol = ScaledCholesky::new(&TwoFloatMatrix::from_f64(&sigma)).unwrap();
        let via_lifted = &predicted - gp.transpose() * chol.solve(&gp);

        let rel = (&exact - &via_lifted).norm() / exact.norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn zero_tilts_leave_higher_order_slots_at_prior_plus_noise() {
        let model = default_model(2, 0);
        let n = 15;
        let tilts = vec![Tilt::new(0.0, 0.0); n];
        let posterior = batch_posterior_cov(&model, &tilts).unwrap();
        let q = model.process_noise()[(2, 2)];
        let expected = 1.0 + (n - 1) as f64 * q;
        for j in 2..model.dim() {
            assert_abs_diff_eq!(posterior[(j, j)], expected, epsilon = 1e-10);
        }
        assert!(posterior[(0, 0)] < 0.05);
    }

    #[test]
    fn lifted_state_maps_end_with_identity() {
        let model = default_model(2, 2);
        let tilts = vec![Tilt::new(1e-3, 0.0); 5];
        let lifted = lifted_observation(&model, &tilts).unwrap();
        let d = model.dim();
        assert_eq!(lifted.stacked.nrows(), 10);
        assert_abs_diff_eq!(
            (&lifted.state_maps[4] - DMatrix::<f64>::identity(d, d)).amax(),
            0.0,
            epsilon = 0.0
        );
        let prod = &lifted.state_maps[3] * model.transition();
        assert!((prod - DMatrix::<f64>::identity(d, d)).amax() < 1e-12);
    }
}
