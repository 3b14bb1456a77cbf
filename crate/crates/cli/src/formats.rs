//! On-disk document formats. Every JSON document carries a schema version;
//! all collections are ordered so identical inputs serialize byte-for-byte
//! identically.

use serde::{Deserialize, Serialize};

use tiltshift_core::model::ModelConfig;
use tiltshift_core::schedule::ScheduleResult;

pub const SCHEMA: u32 = 1;

/// An optimized or baseline pattern with its provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternDoc {
    pub schema: u32,
    /// `greedy`, `rho`, `lissajous`, or `random`.
    pub kind: String,
    pub n: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub result: ScheduleResult,
}

/// One recorded (simulated) tilt experiment. `truth_states` is present
/// exactly when the record came from the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema: u32,
    pub config: ModelConfig,
    /// Master seed of the campaign and this run's sub-stream index.
    pub seed: u64,
    pub run_index: u64,
    /// Acquisition time of each frame, `k * sample_time` seconds.
    pub timestamps: Vec<f64>,
    pub tilts: Vec<tiltshift_core::aberration::Tilt>,
    pub bounds: Vec<f64>,
    /// Physical shift measurements, one `[x, y]` pair per step.
    pub measurements: Vec<[f64; 2]>,
    /// Normalized ground-truth states, one length-d vector per step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_states: Option<Vec<Vec<f64>>>,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema != SCHEMA {
            return Err(format!("unsupported experiment schema {}", self.schema));
        }
        let n = self.tilts.len();
        let ok = self.measurements.len() == n
            && self.bounds.len() == n
            && self.timestamps.len() == n
            && self
                .truth_states
                .as_ref()
                .map(|t| t.len() == n)
                .unwrap_or(true);
        if ok {
            Ok(())
        } else {
            Err("experiment record has inconsistent lengths".into())
        }
    }
}

/// Per-state row of an estimation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateEstimate {
    pub slot: String,
    pub mean_normalized: f64,
    pub std_normalized: f64,
    /// De-normalized through the state scale (meters, radians, m/s, ...).
    pub mean_physical: f64,
    pub std_physical: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub schema: u32,
    pub n_steps: usize,
    pub log_likelihood: f64,
    pub final_estimates: Vec<StateEstimate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmInitDoc {
    pub init_index: usize,
    pub iterations: usize,
    pub final_log_likelihood: f64,
    pub converged: bool,
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmDoc {
    pub schema: u32,
    /// Measurement noise covariance in shift-scale units, ready to be used
    /// as `measurement_noise` in a model config.
    pub sigma_eps: [[f64; 2]; 2],
    pub chosen_init: usize,
    pub log_likelihood_trace: Vec<f64>,
    pub per_init: Vec<EmInitDoc>,
}

/// Predicted-versus-realized accuracy of one pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatternEvaluation {
    pub pattern: String,
    pub kind: String,
    pub final_weighted_trace: f64,
    pub cost_trajectory: Vec<f64>,
    pub nees_mean: f64,
    pub nees_lower: f64,
    pub nees_upper: f64,
    pub nees_within_bounds: bool,
    pub per_state: Vec<StateAccuracy>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateAccuracy {
    pub slot: String,
    pub predicted_std: f64,
    pub realized_std: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: u32,
    pub runs: usize,
    pub seed: u64,
    pub patterns: Vec<PatternEvaluation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionRound {
    pub round: usize,
    /// Median over the aberration slots of the post-correction residual
    /// magnitude, in normalized units.
    pub median_residual: f64,
    pub ratio_to_initial: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub schema: u32,
    pub initial_median: f64,
    pub rounds: Vec<CorrectionRound>,
}
