//! Small helpers for symmetric matrices: packed upper-triangle storage,
//! eigenvalue clamping and PSD square roots.

use nalgebra::{DMatrix, DVector};

/// Length of the packed upper triangle of an `n`-by-`n` symmetric matrix.
pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packs the upper triangle of a symmetric matrix row-major into a vector.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    let mut v = DVector::zeros(vech_len(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            v[k] = m[(i, j)];
            k += 1;
        }
    }
    v
}

/// Rebuilds a symmetric matrix from its packed upper triangle.
pub fn unvech(v: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(v.len(), vech_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes and clamps negative eigenvalues at zero.
///
/// Returns the clamped matrix together with the total clamped magnitude
/// (sum of the absolute values of the removed negative eigenvalues).
pub fn clamp_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.clone().symmetric_eigen();
    let mut clamped = 0.0;
    for ev in eig.eigenvalues.iter_mut() {
        if *ev < 0.0 {
            clamped += -*ev;
            *ev = 0.0;
        }
    }
    if clamped == 0.0 {
        (sym, 0.0)
    } else {
        (eig.recompose(), clamped)
    }
}

/// Symmetric PSD square root via eigendecomposition, eigenvalues clamped
/// at zero.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    for ev in eig.eigenvalues.iter_mut() {
        *ev = ev.max(0.0).sqrt();
    }
    eig.recompose()
}

/// Solves `m x = b` for symmetric positive-definite `m`, falling back to a
/// diagonal-regularized LU factorization when the Cholesky factorization
/// fails. Returns `None` when the matrix is singular beyond repair.
pub fn solve_spd(m: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.solve(b));
    }
    let n = m.nrows();
    let delta = 1e-12 * (1.0 + m.trace().abs());
    let reg = m + DMatrix::identity(n, n) * delta;
    reg.lu().solve(b)
}

/// Inverse of a symmetric positive-definite matrix with the same fallback
/// as [`solve_spd`].
pub fn inv_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol.inverse());
    }
    let n = m.nrows();
    let delta = 1e-12 * (1.0 + m.trace().abs());
    let reg = m + DMatrix::identity(n, n) * delta;
    reg.try_inverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vech_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let v = vech(&m);
        assert_eq!(v.len(), 6);
        let back = unvech(v.as_slice(), 3);
        assert_eq!(back, m);
    }

    #[test]
    fn clamp_removes_negative_eigenvalues() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (c, mag) = clamp_psd(&m);
        assert!((mag - 0.5).abs() < 1e-12);
        assert!(min_eigenvalue(&c) >= -1e-14);
    }

    #[test]
    fn sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = sqrt_psd(&m);
        let back = &r * &r;
        assert!((back - m).abs().max() < 1e-12);
    }
}
