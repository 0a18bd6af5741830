//! Small shared linear-algebra helpers.
//!
//! Matrix inverses never appear as explicit `inverse()` calls on solution
//! paths; everything goes through factorizations and solves. A symmetric
//! system is first attempted by Cholesky and, when the matrix is invertible
//! but indefinite, falls back to a symmetric eigendecomposition so that the
//! caller still gets an exact solve and a report of the offending eigenvalue
//! when the matrix is truly singular.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Force exact symmetry by averaging with the transpose.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn max_abs_offdiag_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Solve `A X = B` for symmetric `A`, reporting the smallest eigenvalue when
/// `A` is numerically singular. `what` names the matrix in error messages.
pub fn solve_symmetric(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    what: &'static str,
) -> Result<DMatrix<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    // Not positive definite; decide between indefinite-but-invertible and
    // singular using the spectrum.
    let eig = a.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    if max_abs == 0.0 || min_abs <= 1e-13 * max_abs || !min_abs.is_finite() {
        let min_signed = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        return Err(Error::Singular {
            what,
            detail: format!(
                "smallest eigenvalue {:.3e}, largest {:.3e}",
                min_signed, max_abs
            ),
        });
    }
    // A = V diag(w) V', so X = V diag(1/w) V' B.
    let vt_b = eig.eigenvectors.transpose() * b;
    let mut scaled = vt_b;
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row /= eig.eigenvalues[i];
    }
    Ok(&eig.eigenvectors * scaled)
}

/// Spectral condition number of a symmetric matrix (|λ|max / |λ|min).
pub fn symmetric_condition(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let min_abs = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    if min_abs == 0.0 {
        f64::INFINITY
    } else {
        max_abs / min_abs
    }
}

/// Largest singular value by power iteration on `A'A`. Deterministic start,
/// tolerance on the Rayleigh quotient.
pub fn power_iteration_norm(a: &DMatrix<f64>, iters: usize, tol: f64) -> f64 {
    let m = a.ncols();
    if m == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut v = DVector::<f64>::from_fn(m, |i, _| 1.0 + (i as f64) / (m as f64 + 1.0));
    v /= v.norm();
    let mut prev = 0.0f64;
    for _ in 0..iters {
        let w = a.transpose() * (a * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let lambda = norm; // Rayleigh quotient of A'A at unit v.
        if (lambda - prev).abs() <= tol * lambda.max(1.0) {
            return lambda.sqrt();
        }
        prev = lambda;
    }
    prev.sqrt()
}

/// Cheap 1-norm condition estimate for a square matrix using its LU
/// factorization: ‖S‖₁ · max over probe vectors of ‖S⁻¹v‖₁/‖v‖₁.
pub fn condition_estimate_1norm(s: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = s.nrows();
    let norm1 = (0..n)
        .map(|j| s.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let probes = [
        DVector::<f64>::from_element(n, 1.0),
        DVector::<f64>::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
    ];
    let mut inv_norm = 0.0f64;
    for p in probes {
        if let Some(x) = lu.solve(&p) {
            let num = x.iter().map(|v| v.abs()).sum::<f64>();
            let den = p.iter().map(|v| v.abs()).sum::<f64>();
            inv_norm = inv_norm.max(num / den);
        } else {
            return f64::INFINITY;
        }
    }
    norm1 * inv_norm
}
