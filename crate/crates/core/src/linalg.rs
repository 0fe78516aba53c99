//! Small dense helpers. Anything needing a factorization goes through
//! nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

/// Singular values below this fraction of the largest are treated as zero.
pub const RELATIVE_CUTOFF: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    pseudo_inverse_with_rank(m).0
}

/// Returns the pseudo-inverse together with a flag telling whether any
/// singular value was dropped by the cutoff.
pub fn pseudo_inverse_with_rank(m: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), false);
    }
    let svd = m.clone().svd(true, true);
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let threshold = RELATIVE_CUTOFF * largest;
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut out = DMatrix::zeros(cols, rows);
    let mut dropped = false;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > threshold && s > 0.0 {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        } else {
            dropped = true;
        }
    }
    (out, dropped)
}

/// Solves `a x = b`, falling back to the pseudo-inverse when `a` is
/// numerically singular. The flag reports that fallback.
pub fn solve_or_pinv(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, bool) {
    let (pinv, singular) = pseudo_inverse_with_rank(a);
    (pinv * b, singular)
}

/// Symmetric eigenvalues, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> alloc::vec::Vec<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut vals: alloc::vec::Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    vals
}
