//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative diagonal jitter applied once when a factorization fails.
pub const JITTER: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

/// Lower Cholesky factor. On failure adds `1e-10 * trace / d` to the
/// diagonal once and retries.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d != m.ncols() {
        return Err(Error::Dimension(format!(
            "cholesky of non-square {}x{} matrix",
            d,
            m.ncols()
        )));
    }
    if d == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c.l());
    }
    let bump = JITTER * m.trace() / d as f64;
    if bump > 0.0 {
        let mut j = m.clone();
        for i in 0..d {
            j[(i, i)] += bump;
        }
        if let Some(c) = j.cholesky() {
            return Ok(c.l());
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "{d}x{d} matrix (trace {:.3e}) failed Cholesky even after jitter",
        m.trace()
    )))
}

/// A square-root factor `S` with `S S' = m` for a symmetric PSD matrix.
/// Falls back to an eigen factor for singular matrices, so zero variances
/// are allowed here (unlike [`cholesky`]).
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Ok(l) = cholesky(m) {
        return Ok(l);
    }
    let eig = symmetrize(m).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < -1e-8 * scale) {
        return Err(Error::NotPositiveDefinite(
            "matrix has a clearly negative eigenvalue".into(),
        ));
    }
    let mut f = eig.eigenvectors.clone();
    for (j, &v) in eig.eigenvalues.iter().enumerate() {
        let s = v.max(0.0).sqrt();
        f.column_mut(j).scale_mut(s);
    }
    Ok(f)
}

/// Solve `L L' x = b` given the lower factor `L`.
pub fn chol_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a non-zero diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("cholesky factor has a non-zero diagonal")
}

pub fn chol_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has a non-zero diagonal");
    l.transpose()
        .solve_upper_triangular(&y)
        .expect("cholesky factor has a non-zero diagonal")
}

/// Log-determinant from a Cholesky factor.
pub fn chol_logdet(l: &DMatrix<f64>) -> f64 {
    2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Draw `mean + S e` with `e` standard normal.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let e = DVector::from_fn(factor.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + factor * e
}

/// Block-diagonal matrix from a list of blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

pub fn check_square(m: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::Dimension(format!(
            "{what} must be {d}x{d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_near_singular() {
        // Rank-one plus a diagonal far below machine resolution.
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let mut m = &v * v.transpose();
        m[(2, 2)] += 1e-18;
        assert!(cholesky(&m).is_ok());
    }

    #[test]
    fn psd_factor_handles_zero_matrix() {
        let z = DMatrix::<f64>::zeros(2, 2);
        let f = psd_factor(&z).unwrap();
        assert!(f.iter().all(|v| *v == 0.0));
        assert!(cholesky(&z).is_err());
    }

    #[test]
    fn block_diag_layout() {
        let a = DMatrix::from_element(1, 2, 1.0);
        let b = DMatrix::from_element(2, 1, 2.0);
        let m = block_diag(&[a, b]);
        assert_eq!(m.shape(), (3, 3));
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(2, 2)], 2.0);
        assert_eq!(m[(1, 0)], 0.0);
    }
}
