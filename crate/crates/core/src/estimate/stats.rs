//! Consistency statistics for filter validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Normalized estimation error squared: `e^T P^-1 e`. Chi-square distributed
/// with `dim(e)` degrees of freedom when the filter is consistent.
pub fn nees(error: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if error.len() != cov.nrows() || !cov.is_square() {
        return Err(Error::InvalidArgument(
            "error / covariance dimension mismatch".into(),
        ));
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("covariance is not SPD".into()))?;
    let white = chol.solve(error);
    Ok(error.dot(&white))
}

/// Inverse standard normal CDF (Acklam's rational approximation, relative
/// error below 1.2e-9 across the open unit interval).
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must be in (0, 1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Chi-square quantile via the Wilson-Hilferty cube approximation, accurate
/// to a fraction of a percent for the large degree-of-freedom counts used in
/// Monte-Carlo consistency bands.
pub fn chi_square_quantile(p: f64, dof: f64) -> f64 {
    assert!(dof > 0.0);
    let z = normal_quantile(p);
    let h = 2.0 / (9.0 * dof);
    dof * (1.0 - h + z * h.sqrt()).powi(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normal_quantiles_match_references() {
        assert_abs_diff_eq!(normal_quantile(0.5), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(normal_quantile(0.975), 1.959963984540054, epsilon = 1e-7);
        assert_abs_diff_eq!(normal_quantile(0.995), 2.5758293035489004, epsilon = 1e-7);
        assert_abs_diff_eq!(
            normal_quantile(0.005),
            -normal_quantile(0.995),
            epsilon = 1e-12
        );
    }

    #[test]
    fn chi_square_quantiles_match_references() {
        // Reference values from standard tables.
        assert!((chi_square_quantile(0.95, 10.0) - 18.307).abs() < 0.05);
        assert!((chi_square_quantile(0.99, 19.0) - 36.191).abs() < 0.1);
        let q = chi_square_quantile(0.5, 1000.0);
        assert!((q - 999.33).abs() < 0.5);
    }

    #[test]
    fn nees_of_whitened_error_is_quadratic_norm() {
        let cov = DMatrix::<f64>::identity(3, 3) * 4.0;
        let e = DVector::from_vec(vec![2.0, 0.0, -2.0]);
        assert_abs_diff_eq!(nees(&e, &cov).unwrap(), 2.0, epsilon = 1e-12);
    }
}
