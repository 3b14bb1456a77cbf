//! Drift-augmented linear state-space model.
//!
//! The estimation state stacks the packed aberration slots, a rotational
//! misalignment angle `phi` between tilt and camera axes, and a polynomial
//! specimen-drift chain of order `b` per image axis:
//!
//! ```text
//! x = (c, phi, vx_1 .. vx_b, vy_1 .. vy_b),    d = l + 1 + 2 b
//! ```
//!
//! Aberrations and `phi` are random walks (identity block plus process
//! noise); the shift slots additionally integrate the drift chain with
//! Taylor couplings `tau^j / j!`, and the chain itself is the standard
//! discrete integrator. Measurements are the two shift components:
//! `y = [Psi(theta) | (-ty, tx)^T | 0] x + noise`.
//!
//! States are normalized to typical magnitudes so that covariances stay
//! well-conditioned and trace weights compare like with like: with
//! `S = diag(scales)`, the stored matrices are `A_norm = S^-1 A_phys S` and
//! `C_norm(theta) = C_phys(theta) S`. Measurements keep physical units; the
//! configured measurement noise is expressed in shift-scale units and is
//! converted internally.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::aberration::{
    build_tilt_polynomial_table, enumerate_basis, observation_matrix,
    observation_matrix_gradient, AberrationBasis, Tilt, TiltPolynomialTable,
};
use crate::error::{Error, Result};

/// Per-step tilt magnitude limit (radians) as a function of the time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundSchedule {
    Constant {
        theta_max: f64,
    },
    /// Linear ramp from `start_fraction * theta_max` at `k = 0` to
    /// `theta_max` at `k = ramp_steps`, constant afterwards. Small initial
    /// tilts keep consecutive images similar enough for shift trackers to
    /// lock on.
    Ramp {
        theta_max: f64,
        ramp_steps: u32,
        start_fraction: f64,
    },
    /// Explicit per-step values; indices past the end reuse the last entry.
    Explicit {
        values: Vec<f64>,
    },
}

impl BoundSchedule {
    pub fn bound(&self, k: usize) -> f64 {
        match self {
            BoundSchedule::Constant { theta_max } => *theta_max,
            BoundSchedule::Ramp {
                theta_max,
                ramp_steps,
                start_fraction,
            } => {
                let progress = if *ramp_steps == 0 {
                    1.0
                } else {
                    (k as f64 / *ramp_steps as f64).min(1.0)
                };
                theta_max * (start_fraction + (1.0 - start_fraction) * progress)
            }
            BoundSchedule::Explicit { values } => {
                let i = k.min(values.len().saturating_sub(1));
                values[i]
            }
        }
    }

    /// Bounds for steps `0..n`.
    pub fn bounds(&self, n: usize) -> Vec<f64> {
        (0..n).map(|k| self.bound(k)).collect()
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BoundSchedule::Constant { theta_max } => *theta_max >= 0.0,
            BoundSchedule::Ramp {
                theta_max,
                start_fraction,
                ..
            } => *theta_max >= 0.0 && (0.0..=1.0).contains(start_fraction),
            BoundSchedule::Explicit { values } => {
                !values.is_empty() && values.iter().all(|v| *v >= 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "tilt bound schedule must be non-negative".into(),
            ))
        }
    }
}

impl Default for BoundSchedule {
    fn default() -> Self {
        BoundSchedule::Ramp {
            theta_max: 0.02,
            ramp_steps: 10,
            start_fraction: 0.1,
        }
    }
}

/// Assignment of the `d` normalized state slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLayout {
    basis: AberrationBasis,
    drift_order: usize,
}

impl StateLayout {
    pub fn new(basis: AberrationBasis, drift_order: usize) -> Self {
        Self { basis, drift_order }
    }

    pub fn basis(&self) -> &AberrationBasis {
        &self.basis
    }

    pub fn drift_order(&self) -> usize {
        self.drift_order
    }

    /// Total state dimension `d = l + 1 + 2 b`.
    pub fn dim(&self) -> usize {
        self.basis.real_dim() + 1 + 2 * self.drift_order
    }

    /// Number of packed aberration slots `l`.
    pub fn aberration_dim(&self) -> usize {
        self.basis.real_dim()
    }

    pub fn rotation_slot(&self) -> usize {
        self.basis.real_dim()
    }

    /// Slot of the drift derivative of the given order (1 = velocity,
    /// 2 = acceleration, ...) on the x (`axis = 0`) or y (`axis = 1`) chain.
    pub fn drift_slot(&self, axis: usize, derivative: usize) -> usize {
        debug_assert!(axis < 2 && (1..=self.drift_order).contains(&derivative));
        self.basis.real_dim() + 1 + axis * self.drift_order + (derivative - 1)
    }

    pub fn slot_names(&self) -> Vec<String> {
        let mut names = self.basis.slot_names();
        names.push("phi".into());
        for axis in ["x", "y"] {
            for j in 1..=self.drift_order {
                names.push(match j {
                    1 => format!("vel_{axis}"),
                    2 => format!("acc_{axis}"),
                    _ => format!("drift_{axis}{j}"),
                });
            }
        }
        names
    }
}

/// Configuration of the state-space model. Serializes to/from a JSON
/// document (matrices as nested row-major arrays); missing optional fields
/// are filled with the documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub max_order: u32,
    pub drift_order: usize,
    /// Sampling time in seconds.
    pub sample_time: f64,
    /// Physical magnitude of one normalized unit, per state slot.
    pub state_scales: Vec<f64>,
    /// Normalized per-step process noise variance, per state slot.
    pub process_noise_diag: Vec<f64>,
    /// Measurement noise covariance in shift-scale units squared.
    pub measurement_noise: [[f64; 2]; 2],
    /// Normalized prior mean and covariance.
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    pub tilt_bound_schedule: BoundSchedule,
}

#[derive(Deserialize)]
struct PartialConfig {
    #[serde(default = "default_schema")]
    schema: u32,
    max_order: u32,
    drift_order: usize,
    sample_time: f64,
    #[serde(default)]
    state_scales: Option<Vec<f64>>,
    #[serde(default)]
    process_noise_diag: Option<Vec<f64>>,
    #[serde(default)]
    measurement_noise: Option<[[f64; 2]; 2]>,
    #[serde(default)]
    prior_mean: Option<Vec<f64>>,
    #[serde(default)]
    prior_cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    tilt_bound_schedule: Option<BoundSchedule>,
}

#[derive(Serialize)]
struct ConfigDoc<'a> {
    schema: u32,
    #[serde(flatten)]
    config: &'a ModelConfig,
}

fn default_schema() -> u32 {
    1
}

pub const CONFIG_SCHEMA: u32 = 1;

/// Default physical scale of one normalized unit for an aberration slot of
/// the given order: 1 nm up to second order, then two decades per order.
fn default_aberration_scale(order: u32) -> f64 {
    match order {
        0..=2 => 1e-9,
        o => 1e-9 * 100f64.powi(o as i32 - 2),
    }
}

impl ModelConfig {
    /// Builds the default configuration for the given structure: spec'd
    /// scales, 1e-6 normalized process noise everywhere, 1e-4 normalized
    /// measurement noise variance, standard normal prior, ramped bounds.
    pub fn new(max_order: u32, drift_order: usize, sample_time: f64) -> Result<Self> {
        let basis = enumerate_basis(max_order)?;
        let layout = StateLayout::new(basis.clone(), drift_order);
        let d = layout.dim();

        let mut scales = Vec::with_capacity(d);
        for idx in basis.indices() {
            let s = default_aberration_scale(idx.order);
            for _ in 0..idx.slot_width() {
                scales.push(s);
            }
        }
        scales.push(10e-3); // phi: 10 mrad
        for _axis in 0..2 {
            for _j in 1..=drift_order {
                scales.push(1e-9); // 1 nm / s^j
            }
        }

        let prior_cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Ok(Self {
            max_order,
            drift_order,
            sample_time,
            state_scales: scales,
            process_noise_diag: vec![1e-6; d],
            measurement_noise: [[1e-4, 0.0], [0.0, 1e-4]],
            prior_mean: vec![0.0; d],
            prior_cov,
            tilt_bound_schedule: BoundSchedule::default(),
        })
    }

    pub fn layout(&self) -> Result<StateLayout> {
        Ok(StateLayout::new(
            enumerate_basis(self.max_order)?,
            self.drift_order,
        ))
    }

    /// Parses a JSON document, filling omitted optional fields with the
    /// defaults of [`ModelConfig::new`].
    pub fn from_json(text: &str) -> Result<Self> {
        let partial: PartialConfig = serde_json::from_str(text)?;
        if partial.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "unsupported config schema {} (expected {CONFIG_SCHEMA})",
                partial.schema
            )));
        }
        let mut config =
            ModelConfig::new(partial.max_order, partial.drift_order, partial.sample_time)?;
        if let Some(v) = partial.state_scales {
            config.state_scales = v;
        }
        if let Some(v) = partial.process_noise_diag {
            config.process_noise_diag = v;
        }
        if let Some(v) = partial.measurement_noise {
            config.measurement_noise = v;
        }
        if let Some(v) = partial.prior_mean {
            config.prior_mean = v;
        }
        if let Some(v) = partial.prior_cov {
            config.prior_cov = v;
        }
        if let Some(v) = partial.tilt_bound_schedule {
            config.tilt_bound_schedule = v;
        }
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ConfigDoc {
            schema: CONFIG_SCHEMA,
            config: self,
        })?)
    }
}

/// The assembled normalized system. Immutable after construction and safe
/// to share across threads.
#[derive(Debug, Clone)]
pub struct LinearModel {
    layout: StateLayout,
    table: TiltPolynomialTable,
    transition: DMatrix<f64>,
    process_noise: DMatrix<f64>,
    /// Measurement noise in physical measurement units.
    measurement_noise: Matrix2<f64>,
    prior_mean: DVector<f64>,
    prior_cov: DMatrix<f64>,
    scales: DVector<f64>,
    bounds: BoundSchedule,
    sample_time: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let sym_err = (m - m.transpose()).amax();
    if sym_err > 1e-10 * (1.0 + m.amax()) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be symmetric (asymmetry {sym_err:.3e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eigisx = sym.symmetric_eigenvalues();
    let min_eig = eigisx.min();
    if min_eig < -1e-10 * (1.0 + m.amax()) {
        return Err(Error::InvalidArgument(format!(
            "{what} must be positive semi-definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// Assembles the normalized model from a validated configuration.
pub fn build_model(config: &ModelConfig) -> Result<LinearModel> {
    let basis = enumerate_basis(config.max_order)?;
    let layout = StateLayout::new(basis.clone(), config.drift_order);
    let d = layout.dim();
    let b = config.drift_order;
    let tau = config.sample_time;

    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample_time must be positive, got {tau}"
        )));
    }
    if config.state_scales.len() != d {
        return Err(Error::InvalidArgument(format!(
            "state_scales has length {}, expected d = {d}",
            config.state_scales.len()
        )));
    }
    if config.state_scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidArgument(
            "state_scales must all be positive".into(),
        ));
    }
    if config.process_noise_diag.len() != d {
        return Err(Error::InvalidArgument(format!(
            "process_noise_diag has length {}, expected d = {d}",
            config.process_noise_diag.len()
        )));
    }
    if config.process_noise_diag.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument(
            "process_noise_diag must be non-negative".into(),
        ));
    }
    if config.prior_mean.len() != d {
        return Err(Error::InvalidArgument(format!(
            "prior_mean has length {}, expected d = {d}",
            config.prior_mean.len()
        )));
    }
    if config.prior_cov.len() != d || config.prior_cov.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument(format!(
            "prior_cov must be a {d} x {d} matrix"
        )));
    }
    config.tilt_bound_schedule.validate()?;

    let prior_cov = DMatrix::from_fn(d, d, |i, j| config.prior_cov[i][j]);
    check_symmetric_psd(&prior_cov, "prior_cov")?;

    let noise = Matrix2::new(
        config.measurement_noise[0][0],
        config.measurement_noise[0][1],
        config.measurement_noise[1][0],
        config.measurement_noise[1][1],
    );
    if (noise[(0, 1)] - noise[(1, 0)]).abs() > 1e-12 * (1.0 + noise.amax()) {
        return Err(Error::InvalidArgument(
            "measurement_noise must be symmetric".into(),
        ));
    }
    if !(noise[(0, 0)] > 0.0 && noise.determinant() > 0.0) {
        return Err(Error::InvalidArgument(
            "measurement_noise must be strictly positive definite".into(),
        ));
    }

    let scales = DVector::from_vec(config.state_scales.clone());

    // Physical transition: identity, shift rows integrate the drift chain,
    // and the chain is the usual discrete integrator.
    let mut a_phys = DMatrix::<f64>::identity(d, d);
    for axis in 0..2 {
        for j in 1..=b {
            a_phys[(axis, layout.drift_slot(axis, j))] = tau.powi(j as i32) / factorial(j);
        }
        for i in 1..=b {
            for j in (i + 1)..=b {
                a_phys[(layout.drift_slot(axis, i), layout.drift_slot(axis, j))] =
                    tau.powi((j - i) as i32) / factorial(j - i);
            }
        }
    }
    let transition = DMatrix::from_fn(d, d, |i, j| a_phys[(i, j)] * scales[j] / scales[i]);

    // Configured measurement noise is in shift-scale units; the filter works
    // with physical measurements.
    let d_shift = Matrix2::new(scales[0], 0.0, 0.0, scales[1]);
    let measurement_noise = d_shift * noise * d_shift;

    Ok(LinearModel {
        layout,
        table: build_tilt_polynomial_table(&basis),
        transition,
        process_noise: DMatrix::from_diagonal(&DVector::from_vec(
            config.process_noise_diag.clone(),
        )),
        measurement_noise,
        prior_mean: DVector::from_vec(config.prior_mean.clone()),
        prior_cov,
        scales,
        bounds: config.tilt_bound_schedule.clone(),
        sample_time: tau,
    })
}

impl LinearModel {
    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.process_noise
    }

    /// Measurement noise covariance in physical measurement units.
    pub fn measurement_noise(&self) -> &Matrix2<f64> {
        &self.measurement_noise
    }

    /// Measurement noise covariance in shift-scale units, as configured.
    pub fn measurement_noise_normalized(&self) -> Matrix2<f64> {
        let d = Matrix2::new(1.0 / self.scales[0], 0.0, 0.0, 1.0 / self.scales[1]);
        d * self.measurement_noise * d
    }

    /// Returns a copy with the measurement noise replaced (shift-scale
    /// units). Used by the EM loop.
    pub fn with_measurement_noise_normalized(&self, noise: Matrix2<f64>) -> Self {
        let mut out = self.clone();
        let d = Matrix2::new(self.scales[0], 0.0, 0.0, self.scales[1]);
        out.measurement_noise = d * noise * d;
        out
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn prior_cov(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn scales(&self) -> &DVector<f64> {
        &self.scales
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn bounds(&self) -> &BoundSchedule {
        &self.bounds
    }

    pub fn tilt_bound(&self, k: usize) -> f64 {
        self.bounds.bound(k)
    }

    /// Observation matrix `[Psi(theta) S_aberr | (-ty, tx)^T s_shift | 0]`
    /// mapping the normalized state to the physical shift measurement.
    ///
    /// The rotation-misalignment column is the normalized-display column
    /// `(-ty, tx)` carried to physical output units through the shift
    /// scales, keeping it commensurate with the shift block; one normalized
    /// unit of misalignment perturbs the measurement like a shift-scale
    /// displacement at full tilt.
    pub fn observation(&self, theta: Tilt) -> DMatrix<f64> {
        let d = self.dim();
        let l = self.layout.aberration_dim();
        let mut c = DMatrix::zeros(2, d);
        let psi = observation_matrix(&self.table, theta);
        for j in 0..l {
            c[(0, j)] = psi[(0, j)] * self.scales[j];
            c[(1, j)] = psi[(1, j)] * self.scales[j];
        }
        let rot = self.layout.rotation_slot();
        c[(0, rot)] = -theta.ty * self.scales[0];
        c[(1, rot)] = theta.tx * self.scales[1];
        c
    }

    /// Exact partial derivatives of [`LinearModel::observation`] with
    /// respect to the tilt components.
    pub fn observation_gradient(&self, theta: Tilt) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.dim();
        let l = self.layout.aberration_dim();
        let (px, py) = observation_matrix_gradient(&self.table, theta);
        let mut gx = DMatrix::zeros(2, d);
        let mut gy = DMatrix::zeros(2, d);
        for j in 0..l {
            gx[(0, j)] = px[(0, j)] * self.scales[j];
            gx[(1, j)] = px[(1, j)] * self.scales[j];
            gy[(0, j)] = py[(0, j)] * self.scales[j];
            gy[(1, j)] = py[(1, j)] * self.scales[j];
        }
        let rot = self.layout.rotation_slot();
        gx[(1, rot)] = self.scales[1];
        gy[(0, rot)] = -self.scales[0];
        (gx, gy)
    }

    /// Maps a normalized state estimate back to physical units.
    pub fn denormalize_mean(&self, mean: &DVector<f64>) -> DVector<f64> {
        mean.component_mul(&self.scales)
    }

    /// Maps a normalized covariance back to physical units.
    pub fn denormalize_cov(&self, cov: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| cov[(i, j)] * self.scales[i] * self.scales[j])
    }
}
