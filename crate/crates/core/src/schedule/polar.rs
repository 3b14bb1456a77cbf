//! Polar parameterization of tilt sequences.
//!
//! In polar coordinates the disk constraints become per-step boxes on the
//! radius while the angle is periodic. The angle of a zero tilt is
//! canonicalized to 0.

use crate::aberration::Tilt;

/// Tilts to `(radii, angles)`; angles are in `[0, 2 pi)`.
pub fn to_polar(tilts: &[Tilt]) -> (Vec<f64>, Vec<f64>) {
    let mut radii = Vec::with_capacity(tilts.len());
    let mut angles = Vec::with_capacity(tilts.len());
    for t in tilts {
        let r = t.norm();
        radii.push(r);
        angles.push(if r == 0.0 {
            0.0
        } else {
            wrap_angle(t.ty.atan2(t.tx))
        });
    }
    (radii, angles)
}

/// `(radii, angles)` back to tilts.
pub fn from_polar(radii: &[f64], angles: &[f64]) -> Vec<Tilt> {
    radii
        .iter()
        .zip(angles)
        .map(|(&r, &psi)| Tilt::new(r * psi.cos(), r * psi.sin()))
        .collect()
}

/// Wraps an angle into `[0, 2 pi)`.
pub(crate) fn wrap_angle(psi: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let wrapped = psi.rem_euclid(tau);
    if wrapped == tau {
        0.0
    } else {
        wrapped
    }
}
