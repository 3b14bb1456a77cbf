//! Unoptimized baseline tilt patterns.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::solver::random_feasible;
use super::TiltSequence;
use crate::aberration::Tilt;
use crate::error::{Error, Result};

/// A Lissajous figure over the sequence:
///
/// ```text
/// u_k = (sin(2 pi a k / N), sin(2 pi b k / N + pi / 2))
/// tilt_k = bound_k * u_k / max_j |u_j|
/// ```
///
/// The phase offset of a quarter period on the second axis opens the figure
/// at `k = 0`; the global normalization preserves the curve's shape while
/// making the largest excursion touch its bound, so feasibility holds for
/// any bound profile.
pub fn lissajous_pattern(
    n: usize,
    ratio_a: u32,
    ratio_b: u32,
    bounds: &[f64],
) -> Result<TiltSequence> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if bounds.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} bounds for {n} steps",
            bounds.len()
        )));
    }
    let tau = std::f64::consts::TAU;
    let raw: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let phase = k as f64 / n as f64;
            (
                (tau * ratio_a as f64 * phase).sin(),
                (tau * ratio_b as f64 * phase + std::f64::consts::FRAC_PI_2).sin(),
            )
        })
        .collect();
    let max_norm = raw
        .iter()
        .map(|(x, y)| x.hypot(*y))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let tilts = raw
        .iter()
        .zip(bounds)
        .map(|(&(x, y), &b)| Tilt::new(b * x / max_norm, b * y / max_norm))
        .collect();
    TiltSequence::new(tilts, bounds.to_vec())
}

/// Independent draws, each uniform over its feasible disk.
pub fn random_pattern(n: usize, bounds: &[f64], seed: u64) -> Result<TiltSequence> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one step".into()));
    }
    if bounds.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} bounds for {n} steps",
            bounds.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(random_feasible(bounds, &mut rng))
}
