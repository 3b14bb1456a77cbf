//! A-optimal tilt-sequence design.
//!
//! The design variable is the full tilt sequence; the cost is the weighted
//! trace of the posterior covariance at the end of the horizon, which is
//! measurement-free and therefore optimizable offline. The cost is smooth
//! but non-convex, so the solver combines an exact analytic gradient
//! ([`schedule_gradient`]), a projected-gradient local method in polar
//! coordinates where the disk constraints become boxes ([`solve_local`]),
//! multi-start with warm starts ([`optimize_horizon`]), and a
//! receding-horizon driver that commits one tilt at a time
//! ([`receding_horizon`]). Lissajous and uniform-random generators provide
//! unoptimized baselines.

mod cost;
mod patterns;
mod polar;
mod rho;
mod solver;

pub use cost::{schedule_cost, schedule_cost_and_gradient, schedule_gradient};
pub use patterns::{lissajous_pattern, random_pattern};
pub use polar::{from_polar, to_polar};
pub use rho::receding_horizon;
pub use solver::{optimize_horizon, solve_local};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aberration::Tilt;
use crate::error::{Error, Result};
use crate::model::LinearModel;

/// Feasibility slack on the per-step magnitude constraint.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-12;

/// An ordered tilt sequence with its per-step magnitude bounds (radians).
/// Construction enforces `|tilt_k| <= bound_k` up to
/// [`FEASIBILITY_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TiltSequenceDoc", into = "TiltSequenceDoc")]
pub struct TiltSequence {
    tilts: Vec<Tilt>,
    bounds: Vec<f64>,
}

#[derive(Serialize, Deserialize, Clone)]
struct TiltSequenceDoc {
    tilts: Vec<Tilt>,
    bounds: Vec<f64>,
}

impl TryFrom<TiltSequenceDoc> for TiltSequence {
    type Error = Error;
    fn try_from(doc: TiltSequenceDoc) -> Result<Self> {
        TiltSequence::new(doc.tilts, doc.bounds)
    }
}

impl From<TiltSequence> for TiltSequenceDoc {
    fn from(seq: TiltSequence) -> Self {
        TiltSequenceDoc {
            tilts: seq.tilts,
            bounds: seq.bounds,
        }
    }
}

impl TiltSequence {
    pub fn new(tilts: Vec<Tilt>, bounds: Vec<f64>) -> Result<Self> {
        if tilts.len() != bounds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tilts but {} bounds",
                tilts.len(),
                bounds.len()
            )));
        }
        for (k, (t, b)) in tilts.iter().zip(&bounds).enumerate() {
            if !(*b >= 0.0) || t.norm() > b + FEASIBILITY_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "tilt {k} with magnitude {} violates bound {b}",
                    t.norm()
                )));
            }
        }
        Ok(Self { tilts, bounds })
    }

    /// Builds a feasible sequence by radially clamping any tilt that
    /// exceeds its bound.
    pub fn clamped(tilts: Vec<Tilt>, bounds: Vec<f64>) -> Result<Self> {
        if tilts.len() != bounds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tilts but {} bounds",
                tilts.len(),
                bounds.len()
            )));
        }
        let clamped = tilts
            .into_iter()
            .zip(&bounds)
            .map(|(t, &b)| {
                let norm = t.norm();
                if norm > b && norm > 0.0 {
                    Tilt::new(t.tx * b / norm, t.ty * b / norm)
                } else {
                    t
                }
            })
            .collect();
        Ok(Self {
            tilts: clamped,
            bounds,
        })
    }

    pub fn tilts(&self) -> &[Tilt] {
        &self.tilts
    }

    pub fn bounds(&self) -> &[f64] {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.tilts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tilts.is_empty()
    }

    /// CSV export with columns `k, tx, ty, bound`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "tx", "ty", "bound"])?;
        for (k, (t, b)) in self.tilts.iter().zip(&self.bounds).enumerate() {
            w.write_record([
                k.to_string(),
                format!("{}", t.tx),
                format!("{}", t.ty),
                format!("{}", b),
            ])?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut tilts = Vec::new();
        let mut bounds = Vec::new();
        for record in r.records() {
            let record = record?;
            let field = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Io("short CSV record".into()))?
                    .parse()
                    .map_err(|e| Error::Io(format!("bad CSV number: {e}")))
            };
            tilts.push(Tilt::new(field(1)?, field(2)?));
            bounds.push(field(3)?);
        }
        TiltSequence::new(tilts, bounds)
    }
}

/// The A-optimality objective: weighted trace of the posterior covariance at
/// the end of the horizon, starting from a given prior covariance.
#[derive(Debug, Clone)]
pub struct ScheduleObjective<'a> {
    model: &'a LinearModel,
    weight: DMatrix<f64>,
    start_prior_cov: DMatrix<f64>,
}

impl<'a> ScheduleObjective<'a> {
    /// Objective rooted at the model prior.
    pub fn new(model: &'a LinearModel, weight: DMatrix<f64>) -> Result<Self> {
        let prior = model.prior_cov().clone();
        Self::with_start_prior(model, weight, prior)
    }

    /// Objective rooted at an arbitrary prior covariance (used by the
    /// receding-horizon driver at each step).
    pub fn with_start_prior(
        model: &'a LinearModel,
        weight: DMatrix<f64>,
        start_prior_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d = model.dim();
        if weight.shape() != (d, d) || start_prior_cov.shape() != (d, d) {
            return Err(Error::InvalidArgument(format!(
                "weight and prior must be {d} x {d}"
            )));
        }
        let asym = (&weight - weight.transpose()).amax();
        if asym > 1e-10 * (1.0 + weight.amax()) {
            return Err(Error::InvalidArgument(
                "weight matrix must be symmetric".into(),
            ));
        }
        if weight.symmetric_eigenvalues().min() < -1e-10 * (1.0 + weight.amax()) {
            return Err(Error::InvalidArgument(
                "weight matrix must be positive semi-definite".into(),
            ));
        }
        Ok(Self {
            model,
            weight,
            start_prior_cov,
        })
    }

    pub fn model(&self) -> &LinearModel {
        self.model
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn start_prior_cov(&self) -> &DMatrix<f64> {
        &self.start_prior_cov
    }
}

/// Equal weight on every normalized state: `W = I / d`.
pub fn uniform_weight(model: &LinearModel) -> DMatrix<f64> {
    let d = model.dim();
    DMatrix::identity(d, d) / d as f64
}

/// Local solver termination and line-search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Projected-gradient norm threshold.
    pub gradient_tolerance: f64,
    /// Relative cost-decrease threshold.
    pub cost_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    pub backtrack_factor: f64,
    pub initial_step: f64,
    /// Below this radius the polar chart is singular and the step for that
    /// tilt is taken in Cartesian coordinates.
    pub polar_epsilon: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            cost_tolerance: 1e-10,
            sufficient_decrease: 1e-4,
            backtrack_factor: 0.5,
            initial_step: 1.0,
            polar_epsilon: 1e-9,
        }
    }
}

/// Multi-start budget: total starts and how many of them are warm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiStartSettings {
    pub n_starts: usize,
    pub n_warm: usize,
}

impl Default for MultiStartSettings {
    fn default() -> Self {
        Self {
            n_starts: 1000,
            n_warm: 100,
        }
    }
}

/// Solver bookkeeping attached to every optimization result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerDiagnostics {
    pub starts_tried: usize,
    pub best_start: usize,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
}

/// An optimized (or baseline) sequence with its predicted cost trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub sequence: TiltSequence,
    /// `tr(W P_{k|k})` over the committed sequence.
    pub cost_trajectory: Vec<f64>,
    pub diagnostics: OptimizerDiagnostics,
}

impl ScheduleResult {
    pub fn final_cost(&self) -> f64 {
        *self
            .cost_trajectory
            .last()
            .expect("non-empty cost trajectory")
    }
}

/// Predicted `tr(W P_{k|k})` trajectory of a sequence under an objective.
pub fn cost_trajectory(objective: &ScheduleObjective, tilts: &[Tilt]) -> Result<Vec<f64>> {
    let traj = crate::estimate::covariance_recursion(
        objective.model(),
        tilts,
        Some(objective.start_prior_cov()),
    )?;
    Ok(traj.weighted_posterior_traces(objective.weight()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelConfig};

    #[test]
    fn sequence_enforces_feasibility() {
        let tilts = vec![Tilt::new(3e-3, 4e-3)]; // norm 5e-3
        assert!(TiltSequence::new(tilts.clone(), vec![4e-3]).is_err());
        assert!(TiltSequence::new(tilts.clone(), vec![5e-3 + 1e-13]).is_ok());
        let clamped = TiltSequence::clamped(tilts, vec![1e-3]).unwrap();
        assert!((clamped.tilts()[0].norm() - 1e-3).abs() < 1e-18);
    }

    #[test]
    fn csv_round_trip() {
        let seq = TiltSequence::new(
            vec![Tilt::new(1e-3, -2e-3), Tilt::new(0.0, 0.0)],
            vec![5e-3, 5e-3],
        )
        .unwrap();
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let parsed = TiltSequence::read_csv(buf.as_slice()).unwrap();
        assert_eq!(seq, parsed);
    }

    #[test]
    fn json_round_trip_revalidates() {
        let seq = TiltSequence::new(vec![Tilt::new(1e-3, 0.0)], vec![2e-3]).unwrap();
        let text = serde_json::to_string(&seq).unwrap();
        let parsed: TiltSequence = serde_json::from_str(&text).unwrap();
        assert_eq!(seq, parsed);
        let bad = r#"{"tilts":[{"tx":1.0,"ty":0.0}],"bounds":[0.5]}"#;
        assert!(serde_json::from_str::<TiltSequence>(bad).is_err());
    }

    #[test]
    fn objective_rejects_bad_weight() {
        let model = build_model(&ModelConfig::new(2, 0, 1.0).unwrap()).unwrap();
        let d = model.dim();
        let mut asym = DMatrix::<f64>::identity(d, d);
        asym[(0, 1)] = 0.5;
        assert!(ScheduleObjective::new(&model, asym).is_err());
        let mut negative = DMatrix::<f64>::identity(d, d);
        negative[(0, 0)] = -1.0;
        assert!(ScheduleObjective::new(&model, negative).is_err());
        assert!(ScheduleObjective::new(&model, uniform_weight(&model)).is_ok());
    }
}
