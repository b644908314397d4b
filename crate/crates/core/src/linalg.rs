//! Small dense helpers on top of nalgebra. Sizes here are tiny (n ≤ ~6), so
//! the Kronecker formulation of the Lyapunov equation is fine.

use nalgebra::{Complex, DMatrix};

/// Solves `F·X + X·Fᵀ = W` for `X`. Returns `None` when the Kronecker
/// operator is singular (some pair of eigenvalues of `F` sums to zero).
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let op = eye.kronecker(f) + f.kronecker(&eye);
    let rhs = DMatrix::from_column_slice(n * n, 1, w.as_slice());
    let vec_x = op.lu().solve(&rhs)?;
    if vec_x.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(n, n, vec_x.as_slice()))
}

/// Numerical rank: singular values above `rel_tol · σ_max` count.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let sigma_max = sv.max();
    if sigma_max <= 0.0 || !sigma_max.is_finite() {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * sigma_max).count()
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn max_real_part(eigs: &[Complex<f64>]) -> f64 {
    eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    max_real_part(&eigenvalues(m)) < 0.0
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m).symmetric_eigenvalues().min()
}
