//! Diffusion-wavelet compression: scaling-function bases from a
//! rank-revealing (column-pivoted) Gram-Schmidt orthonormalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;

use super::{square_in_basis, CompressionStep, Squaring};

/// Orthonormalizes the columns of `a` with column pivoting, stopping when
/// the largest remaining column norm is at or below `epsilon`.
///
/// Returns the orthonormal columns and the pivot magnitudes `|r_kk|` in the
/// order chosen. At least one column is kept when `a` is nonzero.
pub fn pivoted_gram_schmidt(a: &DMatrix<f64>, epsilon: f64) -> (DMatrix<f64>, Vec<f64>, Option<f64>) {
    let (m, n) = a.shape();
    let mut work: Vec<DVector<f64>> = (0..n).map(|c| a.column(c).into_owned()).collect();
    let mut used = vec![false; n];
    let mut q: Vec<DVector<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut next_pivot = None;

    while q.len() < m.min(n) {
        let mut best = None;
        let mut best_norm = -1.0;
        for (c, w) in work.iter().enumerate() {
            if used[c] {
                continue;
            }
            let norm = w.norm();
            if norm > best_norm {
                best_norm = norm;
                best = Some(c);
            }
        }
        let Some(c) = best else { break };
        if best_norm <= epsilon && !q.is_empty() {
            next_pivot = Some(best_norm);
            break;
        }
        if best_norm == 0.0 {
            break;
        }
        let mut v = work[c].clone() / best_norm;
        // Second pass against the accepted columns keeps orthogonality tight.
        for prev in &q {
            let proj = prev.dot(&v);
            v.axpy(-proj, prev, 1.0);
        }
        v /= v.norm();
        used[c] = true;
        for (k, w) in work.iter_mut().enumerate() {
            if !used[k] {
                let proj = v.dot(w);
                w.axpy(-proj, &v, 1.0);
            }
        }
        q.push(v);
        pivots.push(best_norm);
    }

    let mut basis = DMatrix::zeros(m, q.len());
    for (k, v) in q.iter().enumerate() {
        basis.set_column(k, v);
    }
    (basis, pivots, next_pivot)
}

/// One DWA level: scaling functions `Phi` spanning the columns of `prev` up
/// to `epsilon`, and `Phi^T prev^2 Phi`.
pub fn dwa_compress_step(prev: &dyn LinearOperator, epsilon: f64) -> Result<CompressionStep> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("DWA precision {epsilon} must be positive")));
    }
    if prev.nrows() != prev.ncols() {
        return Err(Error::Dimension("DWA needs a square operator".into()));
    }
    let dense = prev.to_dense();
    if dense.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("operator has non-finite entries".into()));
    }
    let (basis, pivots, next) = pivoted_gram_schmidt(&dense, epsilon);
    if basis.ncols() == 0 {
        return Err(Error::Domain("operator is identically zero".into()));
    }
    let operator = square_in_basis(prev, &basis, Squaring::ProjectSquare);
    Ok(CompressionStep {
        basis,
        operator,
        retained: pivots,
        residual: next.unwrap_or(0.0),
    })
}
