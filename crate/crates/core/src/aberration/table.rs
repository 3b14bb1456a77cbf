//! Exact polynomial expansion of the tilt-to-shift observation map.
//!
//! The measured image shift is the transformed `c11'` coefficient, which is
//! linear in the packed baseline vector: `shift = Psi(theta) c` with
//! `Psi(theta)` a 2 x l real matrix whose entries are polynomials of degree
//! at most `M - 1` in the tilt components. This module expands those entries
//! symbolically once per basis, so that `Psi` and its exact tilt derivatives
//! can be evaluated from monomials with no re-derivation and no fitting.
//!
//! For a basis slot at `(m, n)` the shift row of the tilt transform reduces
//! to a single term pair (`beta = (m + n) / 2`, `delta = (m - n) / 2`):
//!
//! ```text
//! c11' += (beta / m) conj(t)^(beta-1) t^delta u
//!       + (delta / m) conj(t)^(delta-1) t^beta conj(u)
//! ```
//!
//! where `u` is the unit coefficient occupying the slot (1 for a real slot
//! or the real part, i for an imaginary part). Expanding the complex powers
//! in `t = tx + i ty` yields the monomials stored here.

use num_complex::Complex64;

use super::{AberrationBasis, Tilt};
use crate::error::{Error, Result};

/// A single real monomial `coeff * tx^dx * ty^dy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Monomial {
    pub dx: u32,
    pub dy: u32,
    pub coeff: f64,
}

impl Monomial {
    fn eval(&self, t: Tilt) -> f64 {
        self.coeff * t.tx.powi(self.dx as i32) * t.ty.powi(self.dy as i32)
    }

    /// Exact partial derivatives, dropping vanished terms.
    fn diff_x(&self) -> Option<Monomial> {
        (self.dx > 0).then(|| Monomial {
            dx: self.dx - 1,
            dy: self.dy,
            coeff: self.coeff * self.dx as f64,
        })
    }

    fn diff_y(&self) -> Option<Monomial> {
        (self.dy > 0).then(|| Monomial {
            dx: self.dx,
            dy: self.dy - 1,
            coeff: self.coeff * self.dy as f64,
        })
    }
}

/// Precomputed monomial expansion of the two shift rows, one column per
/// packed basis slot.
#[derive(Debug, Clone)]
pub struct TiltPolynomialTable {
    basis: AberrationBasis,
    /// `columns[j][row]` lists the monomials of row `row` (x then y) for
    /// basis slot `j`.
    columns: Vec<[Vec<Monomial>; 2]>,
}

/// Complex polynomial in `(tx, ty)` on a dense-enough term list.
#[derive(Debug, Clone, Default)]
struct ComplexPoly {
    terms: Vec<(u32, u32, Complex64)>,
}

impl ComplexPoly {
    fn constant(c: Complex64) -> Self {
        Self {
            terms: vec![(0, 0, c)],
        }
    }

    fn add_term(&mut self, dx: u32, dy: u32, c: Complex64) {
        if let Some(t) = self.terms.iter_mut().find(|t| t.0 == dx && t.1 == dy) {
            t.2 += c;
        } else {
            self.terms.push((dx, dy, c));
        }
    }

    fn mul(&self, other: &Self) -> Self {
        let mut out = Self::default();
        for &(ax, ay, ac) in &self.terms {
            for &(bx, by, bc) in &other.terms {
                out.add_term(ax + bx, ay + by, ac * bc);
            }
        }
        out
    }

    fn scale(&self, s: Complex64) -> Self {
        Self {
            terms: self.terms.iter().map(|&(x, y, c)| (x, y, s * c)).collect(),
        }
    }

    fn add(&mut self, other: &Self) {
        for &(x, y, c) in &other.terms {
            self.add_term(x, y, c);
        }
    }

    fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(Complex64::new(1.0, 0.0));
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }
}

/// Expands the shift rows of the tilt transform for every basis slot.
/// The expansion is exact; evaluating the table reproduces the transform's
/// shift output to rounding.
pub fn build_tilt_polynomial_table(basis: &AberrationBasis) -> TiltPolynomialTable {
    let t_poly = {
        let mut p = ComplexPoly::default();
        p.add_term(1, 0, Complex64::new(1.0, 0.0));
        p.add_term(0, 1, Complex64::new(0.0, 1.0));
        p
    };
    let tconj_poly = {
        let mut p = ComplexPoly::default();
        p.add_term(1, 0, Complex64::new(1.0, 0.0));
        p.add_term(0, 1, Complex64::new(0.0, -1.0));
        p
    };

    let mut columns = Vec::with_capacity(basis.real_dim());
    for idx in basis.indices() {
        let m = idx.order;
        let n = idx.foldness;
        let beta = (m + n) / 2;
        let delta = (m - n) / 2;
        let units: &[Complex64] = if n == 0 {
            &[Complex64::new(1.0, 0.0)]
        } else {
            &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]
        };
        for &u in units {
            let mut shift = ComplexPoly::default();
            // (beta / m) conj(t)^(beta-1) t^delta u
            let direct = tconj_poly
                .pow(beta - 1)
                .mul(&t_poly.pow(delta))
                .scale(Complex64::new(beta as f64 / m as f64, 0.0) * u);
            shift.add(&direct);
            if delta >= 1 {
                // (delta / m) conj(t)^(delta-1) t^beta conj(u)
                let mirrored = tconj_poly
                    .pow(delta - 1)
                    .mul(&t_poly.pow(beta))
                    .scale(Complex64::new(delta as f64 / m as f64, 0.0) * u.conj());
                shift.add(&mirrored);
            }

            let mut row_x = Vec::new();
            let mut row_y = Vec::new();
            for &(dx, dy, c) in &shift.terms {
                debug_assert!(dx + dy <= basis.max_order() - 1);
                if c.re != 0.0 {
                    row_x.push(Monomial { dx, dy, coeff: c.re });
                }
                if c.im != 0.0 {
                    row_y.push(Monomial { dx, dy, coeff: c.im });
                }
            }
            columns.push([row_x, row_y]);
        }
    }
    TiltPolynomialTable {
        basis: basis.clone(),
        columns,
    }
}

impl TiltPolynomialTable {
    pub fn basis(&self) -> &AberrationBasis {
        &self.basis
    }

    /// Monomials of one matrix entry (`row` 0 = x shift, 1 = y shift).
    pub fn entry(&self, row: usize, column: usize) -> &[Monomial] {
        &self.columns[column][row]
    }

    /// Writes `Psi(theta)` into a caller-provided row-major 2 x l buffer.
    pub fn eval_into(&self, theta: Tilt, out: &mut [f64]) -> Result<()> {
        let l = self.basis.real_dim();
        if out.len() != 2 * l {
            return Err(Error::InvalidArgument(format!(
                "observation buffer length {} != {}",
                out.len(),
                2 * l
            )));
        }
        for (j, col) in self.columns.iter().enumerate() {
            for row in 0..2 {
                out[row * l + j] = col[row].iter().map(|m| m.eval(theta)).sum();
            }
        }
        Ok(())
    }
}

/// Evaluates the observation matrix `Psi(theta)` (2 x l, row-major pair of
/// rows) from the precomputed table.
pub fn observation_matrix(table: &TiltPolynomialTable, theta: Tilt) -> nalgebra::DMatrix<f64> {
    let l = table.basis.real_dim();
    let mut out = nalgebra::DMatrix::zeros(2, l);
    for (j, col) in table.columns.iter().enumerate() {
        for row in 0..2 {
            out[(row, j)] = col[row].iter().map(|m| m.eval(theta)).sum();
        }
    }
    out
}

/// Exact partial derivatives `(dPsi/dtx, dPsi/dty)` obtained by
/// differentiating each stored monomial.
pub fn observation_matrix_gradient(
    table: &TiltPolynomialTable,
    theta: Tilt,
) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let l = table.basis.real_dim();
    let mut gx = nalgebra::DMatrix::zeros(2, l);
    let mut gy = nalgebra::DMatrix::zeros(2, l);
    for (j, col) in table.columns.iter().enumerate() {
        for row in 0..2 {
            gx[(row, j)] = col[row].iter().filter_map(|m| m.diff_x()).map(|m| m.eval(theta)).sum();
            gy[(row, j)] = col[row].iter().filter_map(|m| m.diff_y()).map(|m| m.eval(theta)).sum();
        }
    }
    (gx, gy)
}
