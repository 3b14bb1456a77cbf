//! Tilt-induced aberration transform.
//!
//! A beam tilt `t` mixes the baseline coefficients into effective ones. For
//! an output slot `(m', n')` write `alpha = (m' + n') / 2` and
//! `gamma = (m' - n') / 2`; the effective coefficient is
//!
//! ```text
//! c'_{m'n'} = rho(alpha, gamma) (alpha + gamma)
//!     sum_{beta = alpha}^{M} sum_{delta = gamma}^{min(beta, M - beta)} [
//!         C(beta, alpha) C(delta, gamma) conj(t)^{beta - alpha} t^{delta - gamma} c_{mn} / m
//!       + C(beta, gamma) C(delta, alpha) conj(t)^{delta - alpha} t^{beta - gamma} conj(c_{mn}) / m
//!     ]
//! ```
//!
//! with `(m, n) = (beta + delta, beta - delta)`, `rho = 1/2` when
//! `alpha = gamma` and `1` otherwise, and `C(n, k) = 0` whenever `k > n`
//! (which silently kills the cross terms with negative tilt exponents).
//! The result is linear in the coefficients and polynomial of degree
//! `m' - 1 <= M - 1` in the tilt components.

use num_complex::Complex64;

use super::{AberrationVector, BinomialTable, Tilt};

/// Applies the tilt transform to a packed coefficient vector, returning the
/// effective coefficients on the same basis.
///
/// At zero tilt this is the identity. Real output slots (`n' = 0`) receive
/// exactly conjugate term pairs, so their imaginary parts cancel to zero.
pub fn tilt_transform(c: &AberrationVector, t: Tilt) -> AberrationVector {
    let basis = c.basis();
    let max_order = basis.max_order();
    let binom = BinomialTable::new(max_order);

    let tc = t.as_complex();
    // Powers of t and conj(t) up to M; exponents never exceed M - 1.
    let mut t_pow = vec![Complex64::new(1.0, 0.0); (max_order + 1) as usize];
    let mut tconj_pow = t_pow.clone();
    for p in 1..=max_order as usize {
        t_pow[p] = t_pow[p - 1] * tc;
        tconj_pow[p] = tconj_pow[p - 1] * tc.conj();
    }

    let mut out = AberrationVector::zeros(basis.clone());
    for &out_idx in basis.indices() {
        let alpha = (out_idx.order + out_idx.foldness) / 2;
        let gamma = (out_idx.order - out_idx.foldness) / 2;
        // rho * (alpha + gamma) folded into each term's coefficient keeps
        // the diagonal factor an exact 1 (or exact half-pair) at zero tilt.
        let prefactor = if alpha == gamma {
            0.5 * (alpha + gamma) as f64
        } else {
            (alpha + gamma) as f64
        };

        let mut acc = Complex64::new(0.0, 0.0);
        for beta in alpha..=max_order {
            let zeta = beta.min(max_order - beta);
            for delta in gamma..=zeta {
                let m = beta + delta;
                let n = beta - delta;
                let c_in = c
                    .complex_at(super::AberrationIndex {
                        order: m,
                        foldness: n,
                    })
                    .expect("summation indices stay inside the basis");

                let k1 = binom.get(beta, alpha) * binom.get(delta, gamma);
                if k1 != 0.0 {
                    acc += (prefactor * k1 / m as f64)
                        * tconj_pow[(beta - alpha) as usize]
                        * t_pow[(delta - gamma) as usize]
                        * c_in;
                }
                let k2 = binom.get(beta, gamma) * binom.get(delta, alpha);
                if k2 != 0.0 {
                    // C(delta, alpha) != 0 guarantees delta >= alpha here.
                    acc += (prefactor * k2 / m as f64)
                        * tconj_pow[(delta - alpha) as usize]
                        * t_pow[(beta - gamma) as usize]
                        * c_in.conj();
                }
            }
        }
        debug_assert!(
            out_idx.foldness > 0 || acc.im.abs() <= 1e-12 * (1.0 + acc.re.abs()),
            "real slot picked up an imaginary part"
        );
        out.set_complex(out_idx, acc).unwrap();
    }
    out
}
