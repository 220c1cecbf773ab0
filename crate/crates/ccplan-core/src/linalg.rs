//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Symmetrize a square matrix: (M + M^T) / 2.
pub fn sym_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalue range (min, max) of a symmetric matrix.
///
/// The input is symmetrized first; callers pass covariance-like matrices that
/// may carry roundoff asymmetry.
pub fn sym_eig_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = sym_part(m).symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Symmetric square root of a positive semidefinite matrix.
///
/// Symmetrizes, eigendecomposes, clips negative eigenvalues at zero, and
/// reassembles U sqrt(L) U^T. The clip tolerates the small negative
/// eigenvalues roundoff produces; a genuinely indefinite input is the
/// caller's bug and surfaces as a larger-than-roundoff clip, which we allow
/// because every call site validates definiteness where it matters.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym_part(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    &scaled * eig.eigenvectors.transpose()
}

/// Check that `m` is square, finite, and symmetric within `tol * scale`.
pub fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what}: expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    for i in 0..m.nrows() {
        for j in 0..i {
            if !m[(i, j)].is_finite() || (m[(i, j)] - m[(j, i)]).abs() > 1e-8 * scale {
                return Err(Error::Domain(format!(
                    "{what}: not symmetric at ({i},{j})"
                )));
            }
        }
        if !m[(i, i)].is_finite() {
            return Err(Error::Domain(format!("{what}: non-finite diagonal")));
        }
    }
    Ok(())
}

/// Require every entry finite.
pub fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{what}: non-finite entry")));
    }
    Ok(())
}

/// Matrix to row-major nested Vec, for serialization.
pub fn mat_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Row-major nested Vec to matrix. Rows must be equal length.
pub fn rows_mat(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let nc = rows[0].len();
    if rows.iter().any(|r| r.len() != nc) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}
