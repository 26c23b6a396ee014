//! Small shared matrix helpers. The heavier symmetric eigensolver lives in
//! [`crate::lyapunov`] next to the certificate machinery that owns it.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetry tolerance applied to every matrix that claims to be symmetric.
pub(crate) const SYMMETRY_TOL: f64 = 1e-12;

/// Largest entry of `|A - A^T|`.
pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Errors unless `m` is square and symmetric within [`SYMMETRY_TOL`].
pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// `d^T M d` without allocating.
pub(crate) fn quad_form(m: &DMatrix<f64>, d: &[f64]) -> f64 {
    debug_assert_eq!(m.nrows(), d.len());
    debug_assert_eq!(m.ncols(), d.len());
    let mut acc = 0.0;
    for i in 0..d.len() {
        let mut row = 0.0;
        for j in 0..d.len() {
            row += m[(i, j)] * d[j];
        }
        acc += d[i] * row;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn quad_form_matches_direct_product() {
        let p = dmatrix![2.0, 1.0; 1.0, 1.0];
        // (1,2): 2*1 + 1*2 = 4; 1*1 + 1*2 = 3; 1*4 + 2*3 = 10.
        assert_eq!(quad_form(&p, &[1.0, 2.0]), 10.0);
    }

    #[test]
    fn symmetry_check_flags_asymmetry() {
        let m = dmatrix![1.0, 2.0; 2.0 + 1e-6, 1.0];
        assert!(matches!(check_symmetric(&m), Err(Error::NotSymmetric(_))));
        let ok = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(check_symmetric(&ok).is_ok());
    }
}
