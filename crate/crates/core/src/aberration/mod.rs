//! Electron-optics aberration algebra.
//!
//! Aberrations of the objective are parameterized by complex coefficients
//! indexed by `(order m, foldness n)` with `m >= 1`, `0 <= n <= m`, and
//! `m - n` even. A coefficient with `n = 0` is real (one slot in the packed
//! real vector); `n > 0` is complex (two slots, real part first). The packed
//! ordering is canonical project-wide: ascending order, then ascending
//! foldness.
//!
//! Tilting the beam by `t` (complex, radians) transforms the baseline
//! coefficients into effective ones; the transformed image-shift coefficient
//! `c11'` is what the microscope actually reveals, and it is linear in the
//! baseline coefficients. [`tilt_transform`] evaluates the full transform;
//! [`TiltPolynomialTable`] precomputes the shift rows as exact polynomials in
//! the tilt components so that the observation matrix and its derivatives
//! can be evaluated cheaply.

mod phase;
mod table;
mod transform;

pub use phase::{phase_plate_grid, wave_aberration_phase, PhasePlate};
pub use table::{
    build_tilt_polynomial_table, observation_matrix, observation_matrix_gradient, Monomial,
    TiltPolynomialTable,
};
pub use transform::tilt_transform;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One aberration coefficient slot: order `m` and foldness `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AberrationIndex {
    pub order: u32,
    pub foldness: u32,
}

impl AberrationIndex {
    pub fn new(order: u32, foldness: u32) -> Result<Self> {
        if order < 1 || foldness > order || (order - foldness) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid aberration index (m={order}, n={foldness})"
            )));
        }
        Ok(Self { order, foldness })
    }

    /// Real slots occupied: 1 for a real coefficient (n = 0), 2 otherwise.
    pub fn slot_width(&self) -> usize {
        if self.foldness == 0 {
            1
        } else {
            2
        }
    }

    /// Short name such as `c20`; complex slots expand to `re_c22`, `im_c22`.
    pub fn name(&self) -> String {
        format!("c{}{}", self.order, self.foldness)
    }
}

/// The ordered set of coefficient slots up to a maximum order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AberrationBasis {
    max_order: u32,
    indices: Vec<AberrationIndex>,
    offsets: Vec<usize>,
    real_dim: usize,
}

/// Enumerates every valid `(m, n)` with `1 <= m <= max_order` in canonical
/// order: ascending `m`, then ascending `n`.
pub fn enumerate_basis(max_order: u32) -> Result<AberrationBasis> {
    if max_order < 1 {
        return Err(Error::InvalidArgument(format!(
            "max_order must be >= 1, got {max_order}"
        )));
    }
    let mut indices = Vec::new();
    let mut offsets = Vec::new();
    let mut dim = 0usize;
    for m in 1..=max_order {
        let start = if m % 2 == 0 { 0 } else { 1 };
        for n in (start..=m).step_by(2) {
            let idx = AberrationIndex {
                order: m,
                foldness: n,
            };
            indices.push(idx);
            offsets.push(dim);
            dim += idx.slot_width();
        }
    }
    Ok(AberrationBasis {
        max_order,
        indices,
        offsets,
        real_dim: dim,
    })
}

impl AberrationBasis {
    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    pub fn indices(&self) -> &[AberrationIndex] {
        &self.indices
    }

    /// Total number of packed real slots.
    pub fn real_dim(&self) -> usize {
        self.real_dim
    }

    /// Offset of the first real slot of `index` in the packed vector.
    pub fn offset_of(&self, index: AberrationIndex) -> Option<usize> {
        self.indices
            .iter()
            .position(|i| *i == index)
            .map(|p| self.offsets[p])
    }

    /// Offset of the i-th index in canonical order.
    pub fn offset_at(&self, position: usize) -> usize {
        self.offsets[position]
    }

    /// Names of the packed real slots, e.g. `re_c11, im_c11, c20, ...`.
    pub fn slot_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.real_dim);
        for idx in &self.indices {
            if idx.foldness == 0 {
                names.push(idx.name());
            } else {
                names.push(format!("re_{}", idx.name()));
                names.push(format!("im_{}", idx.name()));
            }
        }
        names
    }
}

/// A coefficient vector packed on a basis, in meters per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AberrationVector {
    basis: AberrationBasis,
    values: DVector<f64>,
}

impl AberrationVector {
    pub fn zeros(basis: AberrationBasis) -> Self {
        let values = DVector::zeros(basis.real_dim());
        Self { basis, values }
    }

    pub fn from_values(basis: AberrationBasis, values: DVector<f64>) -> Result<Self> {
        if values.len() != basis.real_dim() {
            return Err(Error::InvalidArgument(format!(
                "coefficient vector length {} does not match basis dimension {}",
                values.len(),
                basis.real_dim()
            )));
        }
        Ok(Self { basis, values })
    }

    pub fn basis(&self) -> &AberrationBasis {
        &self.basis
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    /// Coefficient as a complex number; real coefficients have zero
    /// imaginary part.
    pub fn complex_at(&self, index: AberrationIndex) -> Option<Complex64> {
        let offset = self.basis.offset_of(index)?;
        Some(if index.foldness == 0 {
            Complex64::new(self.values[offset], 0.0)
        } else {
            Complex64::new(self.values[offset], self.values[offset + 1])
        })
    }

    /// Writes a coefficient. For a real slot the imaginary part is dropped;
    /// the transform guarantees it cancels exactly there.
    pub fn set_complex(&mut self, index: AberrationIndex, value: Complex64) -> Result<()> {
        let offset = self
            .basis
            .offset_of(index)
            .ok_or_else(|| Error::InvalidArgument(format!("{} not in basis", index.name())))?;
        if index.foldness == 0 {
            self.values[offset] = value.re;
        } else {
            self.values[offset] = value.re;
            self.values[offset + 1] = value.im;
        }
        Ok(())
    }
}

/// A 2-D beam tilt in radians. Magnitude limits are enforced by callers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tilt {
    pub tx: f64,
    pub ty: f64,
}

impl Tilt {
    pub fn new(tx: f64, ty: f64) -> Self {
        Self { tx, ty }
    }

    pub fn as_complex(&self) -> Complex64 {
        Complex64::new(self.tx, self.ty)
    }

    pub fn norm(&self) -> f64 {
        self.tx.hypot(self.ty)
    }
}

/// Exact binomial coefficients with the convention `C(n, k) = 0` for
/// `k > n`. The tilt transform relies on that convention to cancel its
/// cross terms.
#[derive(Debug, Clone)]
pub(crate) struct BinomialTable {
    rows: Vec<Vec<u64>>,
}

impl BinomialTable {
    pub fn new(max_n: u32) -> Self {
        let max_n = max_n as usize;
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(max_n + 1);
        for n in 0..=max_n {
            let mut row = vec![1u64; n + 1];
            for k in 1..n {
                row[k] = rows[n - 1][k - 1] + rows[n - 1][k];
            }
            rows.push(row);
        }
        Self { rows }
    }

    pub fn get(&self, n: u32, k: u32) -> f64 {
        let (n, k) = (n as usize, k as usize);
        if k > n {
            0.0
        } else {
            self.rows[n][k] as f64
        }
    }
}
