//! Wave aberration phase and phase-plate grids.
//!
//! Each coefficient contributes a phase shift at spatial frequency `g`
//! (complex, 1/m):
//!
//! ```text
//! chi_mn(g) = (2 pi / lambda) (|c_mn| / m) (lambda |g|)^m
//!             cos(n arg(g) - n arg(c_mn))
//! ```
//!
//! and the total phase is the sum over occupied slots. Real coefficients
//! (`n = 0`) contribute their signed value with no azimuthal dependence.

use num_complex::Complex64;

use super::AberrationVector;
use crate::error::{Error, Result};

/// Total wavefront phase shift in radians at spatial frequency `g`.
pub fn wave_aberration_phase(c: &AberrationVector, g: Complex64, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "wavelength must be positive, got {lambda}"
        )));
    }
    let g_norm = g.norm();
    let g_arg = g.arg();
    let mut phase = 0.0;
    for &idx in c.basis().indices() {
        let coeff = c.complex_at(idx).unwrap();
        let m = idx.order;
        let n = idx.foldness;
        if n == 0 {
            // Signed real coefficient, no azimuthal dependence.
            phase += (2.0 * std::f64::consts::PI / lambda)
                * (coeff.re / m as f64)
                * (lambda * g_norm).powi(m as i32);
        } else if coeff.norm() > 0.0 {
            phase += (2.0 * std::f64::consts::PI / lambda)
                * (coeff.norm() / m as f64)
                * (lambda * g_norm).powi(m as i32)
                * (n as f64 * (g_arg - coeff.arg())).cos();
        }
    }
    Ok(phase)
}

/// A phase grid sampled on the square `[-g_max, g_max]^2`, stored row-major
/// with `gy` ascending over rows and `gx` ascending over columns.
#[derive(Debug, Clone)]
pub struct PhasePlate {
    pub g_max: f64,
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl PhasePlate {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.resolution + col]
    }

    /// Writes the grid as CSV: a metadata header record
    /// (`g_min,g_max,resolution`) followed by one record per grid row in the
    /// stored row-major order.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(writer);
        w.write_record(["g_min", "g_max", "resolution"])?;
        w.write_record([
            format!("{}", -self.g_max),
            format!("{}", self.g_max),
            format!("{}", self.resolution),
        ])?;
        for row in 0..self.resolution {
            let record: Vec<String> = (0..self.resolution)
                .map(|col| format!("{}", self.at(row, col)))
                .collect();
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }
}

/// Samples [`wave_aberration_phase`] on a square lattice.
pub fn phase_plate_grid(
    c: &AberrationVector,
    lambda: f64,
    g_max: f64,
    resolution: usize,
) -> Result<PhasePlate> {
    if !(g_max > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "g_max must be positive, got {g_max}"
        )));
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument(format!(
            "resolution must be >= 2, got {resolution}"
        )));
    }
    let step = 2.0 * g_max / (resolution - 1) as f64;
    let mut values = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let gy = -g_max + row as f64 * step;
        for col in 0..resolution {
            let gx = -g_max + col as f64 * step;
            values.push(wave_aberration_phase(c, Complex64::new(gx, gy), lambda)?);
        }
    }
    Ok(PhasePlate {
        g_max,
        resolution,
        values,
    })
}
