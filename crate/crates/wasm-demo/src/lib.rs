//! Browser bindings for the interactive demo page.
//!
//! Three operations are exposed: sampling a wavefront phase plate for a set
//! of low-order aberrations, designing a tilt pattern (optimized or
//! baseline) with its predicted covariance-trace decay, and running one
//! simulated estimation experiment against a designed pattern. Heavier
//! arguments and results cross the boundary as JSON strings; the phase grid
//! crosses as a flat `Float64Array`.

use nalgebra::Vector2;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use tiltshift_core::aberration::{
    enumerate_basis, phase_plate_grid, AberrationVector,
};
use tiltshift_core::estimate::run_filter;
use tiltshift_core::model::{build_model, BoundSchedule, LinearModel, ModelConfig};
use tiltshift_core::schedule::{
    cost_trajectory, lissajous_pattern, random_pattern, receding_horizon, uniform_weight,
    MultiStartSettings, ScheduleObjective, SolverSettings, TiltSequence,
};
use tiltshift_core::sim::{derive_seed, sample_prior_state, simulate_trajectory};

fn stringify(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Samples the wavefront phase (radians) on a `resolution x resolution`
/// grid over `[-g_max, g_max]^2`, row-major with the y frequency ascending
/// over rows. `coefficients` are packed canonically for the given order:
/// `re_c11, im_c11, c20, re_c22, im_c22, ...`, in nanometers.
#[wasm_bindgen]
pub fn phase_plate(
    max_order: u32,
    coefficients_nm: &[f64],
    electron_energy_kev: f64,
    g_max_per_nm: f64,
    resolution: usize,
) -> Result<Vec<f64>, JsValue> {
    phase_plate_impl(
        max_order,
        coefficients_nm,
        electron_energy_kev,
        g_max_per_nm,
        resolution,
    )
    .map_err(|e| JsValue::from_str(&e))
}

fn phase_plate_impl(
    max_order: u32,
    coefficients_nm: &[f64],
    electron_energy_kev: f64,
    g_max_per_nm: f64,
    resolution: usize,
) -> Result<Vec<f64>, String> {
    let basis = enumerate_basis(max_order).map_err(stringify)?;
    if coefficients_nm.len() != basis.real_dim() {
        return Err(format!(
            "expected {} coefficients for order {max_order}, got {}",
            basis.real_dim(),
            coefficients_nm.len()
        ));
    }
    let values =
        nalgebra::DVector::from_iterator(basis.real_dim(), coefficients_nm.iter().map(|c| c * 1e-9));
    let vector = AberrationVector::from_values(basis, values).map_err(stringify)?;
    let lambda = electron_wavelength(electron_energy_kev);
    let plate = phase_plate_grid(&vector, lambda, g_max_per_nm * 1e9, resolution)
        .map_err(stringify)?;
    Ok(plate.values)
}

/// Relativistic electron wavelength in meters.
fn electron_wavelength(energy_kev: f64) -> f64 {
    let rest_energy_kev = 510.99895;
    let hc_m_kev = 1.23984193e-9;
    hc_m_kev / (energy_kev * (energy_kev + 2.0 * rest_energy_kev)).sqrt()
}

/// Names of the packed coefficient slots for the given order, matching the
/// layout `phase_plate` expects.
#[wasm_bindgen]
pub fn slot_names(max_order: u32) -> Result<Vec<String>, JsValue> {
    Ok(enumerate_basis(max_order)
        .map_err(|e| JsValue::from_str(&e.to_string()))?
        .slot_names())
}

#[derive(Serialize)]
struct PatternOut {
    kind: String,
    tilts: Vec<[f64; 2]>,
    bounds: Vec<f64>,
    cost_trajectory: Vec<f64>,
    final_cost: f64,
}

fn demo_model(max_order: u32, theta_max: f64) -> Result<LinearModel, String> {
    let mut config = ModelConfig::new(max_order, 2, 1.0).map_err(stringify)?;
    config.tilt_bound_schedule = BoundSchedule::Ramp {
        theta_max,
        ramp_steps: 10,
        start_fraction: 0.1,
    };
    build_model(&config).map_err(stringify)
}

/// Designs a tilt pattern and returns it with its predicted weighted
/// covariance-trace trajectory as JSON. `kind` is `greedy`, `rho`,
/// `lissajous`, or `random`; `starts` caps the multi-start budget for the
/// optimized kinds.
#[wasm_bindgen]
pub fn design_pattern(
    kind: &str,
    max_order: u32,
    n: usize,
    theta_max_mrad: f64,
    horizon: usize,
    starts: usize,
    seed: u64,
) -> Result<String, JsValue> {
    design_pattern_impl(kind, max_order, n, theta_max_mrad, horizon, starts, seed)
        .map_err(|e| JsValue::from_str(&e))
}

fn design_pattern_impl(
    kind: &str,
    max_order: u32,
    n: usize,
    theta_max_mrad: f64,
    horizon: usize,
    starts: usize,
    seed: u64,
) -> Result<String, String> {
    let model = demo_model(max_order, theta_max_mrad * 1e-3)?;
    let weight = uniform_weight(&model);
    let bounds = model.bounds().bounds(n);

    let sequence: TiltSequence;
    let trajectory: Vec<f64>;
    match kind {
        "greedy" | "rho" => {
            let h = if kind == "greedy" { 1 } else { horizon.max(1) };
            let multi = MultiStartSettings {
                n_starts: starts.max(1),
                n_warm: (starts / 5).max(1),
            };
            let result = receding_horizon(
                &model,
                &weight,
                n,
                h.min(n),
                &multi,
                &SolverSettings::default(),
                seed,
            )
            .map_err(stringify)?;
            trajectory = result.cost_trajectory.clone();
            sequence = result.sequence;
        }
        "lissajous" => {
            sequence = lissajous_pattern(n, 3, 2, &bounds).map_err(stringify)?;
            let objective = ScheduleObjective::new(&model, weight).map_err(stringify)?;
            trajectory = cost_trajectory(&objective, sequence.tilts()).map_err(stringify)?;
        }
        "random" => {
            sequence = random_pattern(n, &bounds, seed).map_err(stringify)?;
            let objective = ScheduleObjective::new(&model, weight).map_err(stringify)?;
            trajectory = cost_trajectory(&objective, sequence.tilts()).map_err(stringify)?;
        }
        other => return Err(format!("unknown pattern kind {other}")),
    }

    let out = PatternOut {
        kind: kind.to_string(),
        tilts: sequence.tilts().iter().map(|t| [t.tx, t.ty]).collect(),
        bounds: sequence.bounds().to_vec(),
        final_cost: *trajectory.last().unwrap_or(&f64::NAN),
        cost_trajectory: trajectory,
    };
    serde_json::to_string(&out).map_err(stringify)
}

#[derive(Serialize)]
struct SlotOut {
    slot: String,
    truth: f64,
    estimate: f64,
    predicted_std: f64,
}

#[derive(Serialize)]
struct EstimationOut {
    slots: Vec<SlotOut>,
    weighted_trace: Vec<f64>,
}

/// Simulates one experiment for a designed pattern and filters it,
/// returning per-slot truth, estimate, and predicted standard deviation
/// (normalized units) plus the realized weighted-trace decay.
#[wasm_bindgen]
pub fn run_estimation(
    pattern_json: &str,
    max_order: u32,
    theta_max_mrad: f64,
    seed: u64,
) -> Result<String, JsValue> {
    run_estimation_impl(pattern_json, max_order, theta_max_mrad, seed)
        .map_err(|e| JsValue::from_str(&e))
}

fn run_estimation_impl(
    pattern_json: &str,
    max_order: u32,
    theta_max_mrad: f64,
    seed: u64,
) -> Result<String, String> {
    #[derive(serde::Deserialize)]
    struct PatternIn {
        tilts: Vec<[f64; 2]>,
        bounds: Vec<f64>,
    }
    let pattern: PatternIn = serde_json::from_str(pattern_json).map_err(stringify)?;
    let model = demo_model(max_order, theta_max_mrad * 1e-3)?;
    let tilts: Vec<tiltshift_core::aberration::Tilt> = pattern
        .tilts
        .iter()
        .map(|t| tiltshift_core::aberration::Tilt::new(t[0], t[1]))
        .collect();
    let _ = pattern.bounds;

    let truth = sample_prior_state(&model, derive_seed(seed, 0));
    let sim = simulate_trajectory(&model, &tilts, &truth, derive_seed(seed, 1)).map_err(stringify)?;
    let measurements: Vec<Vector2<f64>> = sim.measurements.clone();
    let filtered = run_filter(&model, &tilts, &measurements).map_err(stringify)?;

    let weight = uniform_weight(&model);
    let trajectory = filtered.covariance_trajectory();
    let weighted = trajectory.weighted_posterior_traces(&weight);

    let names = model.layout().slot_names();
    let last = filtered.final_posterior();
    let truth_final = sim.states.last().unwrap();
    let slots = names
        .iter()
        .enumerate()
        .map(|(j, slot)| SlotOut {
            slot: slot.clone(),
            truth: truth_final[j],
            estimate: last.mean[j],
            predicted_std: last.cov[(j, j)].max(0.0).sqrt(),
        })
        .collect();
    serde_json::to_string(&EstimationOut {
        slots,
        weighted_trace: weighted,
    })
    .map_err(stringify)
}
