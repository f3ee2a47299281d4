//! Truncated singular value decomposition of an operator.
//!
//! Levels of dimension at most [`DENSE_LIMIT`] (or operators that are already
//! dense) are decomposed exactly. Larger sparse operators use randomized
//! block subspace iteration from a seeded start, stopping once the tracked
//! singular values change by less than [`SOLVER_TOLERANCE`] relative to the
//! largest one.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dense_svd, fix_signs, orthonormalize, LinearOperator};

use super::Truncation;

pub const DENSE_LIMIT: usize = 512;
pub const SOLVER_TOLERANCE: f64 = 1e-8;
const MAX_ITERATIONS: usize = 1000;
const OVERSAMPLE: usize = 8;

/// Leading singular triplets of an operator plus the first discarded value.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `m x j` left singular vectors.
    pub u: DMatrix<f64>,
    /// `j` values, non-increasing.
    pub singular_values: Vec<f64>,
    /// `n x j` right singular vectors.
    pub v: DMatrix<f64>,
    /// `sigma_{j+1}`, or 0 when nothing was discarded.
    pub residual: f64,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// `U diag(sigma) V^T`
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (c, s) in self.singular_values.iter().enumerate() {
            us.column_mut(c).scale_mut(*s);
        }
        us * self.v.transpose()
    }
}

/// Number of singular values kept out of `values` (sorted, length
/// `min(m, n)`) for an operator with `dim` columns.
pub(crate) fn retained_rank(mode: &Truncation, dim: usize, values: &[f64]) -> usize {
    let full = values.len();
    let j = match *mode {
        Truncation::RetainFraction(alpha) => ((alpha * dim as f64) - 1e-9).ceil() as usize,
        Truncation::RetainCount(j) => j,
        Truncation::Threshold(eps) => values.iter().take_while(|&&s| s > eps).count(),
    };
    j.clamp(1, full.max(1))
}

pub fn truncated_svd(op: &dyn LinearOperator, mode: &Truncation, seed: u64) -> Result<TruncatedSvd> {
    mode.validate()?;
    let (m, n) = (op.nrows(), op.ncols());
    if m == 0 || n == 0 {
        return Err(Error::Dimension("cannot decompose an empty operator".into()));
    }
    if !op.is_sparse() || m.max(n) <= DENSE_LIMIT {
        let dense = op.to_dense();
        if dense.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("operator has non-finite entries".into()));
        }
        return Ok(dense_truncated(&dense, mode));
    }
    iterative_truncated(op, mode, seed)
}

fn dense_truncated(m: &DMatrix<f64>, mode: &Truncation) -> TruncatedSvd {
    let svd = dense_svd(m);
    let j = retained_rank(mode, m.ncols(), &svd.singular_values);
    let residual = svd.singular_values.get(j).copied().unwrap_or(0.0);
    TruncatedSvd {
        u: svd.u.columns(0, j).into_owned(),
        singular_values: svd.singular_values[..j].to_vec(),
        v: svd.v.columns(0, j).into_owned(),
        residual,
    }
}

fn iterative_truncated(op: &dyn LinearOperator, mode: &Truncation, seed: u64) -> Result<TruncatedSvd> {
    let (m, n) = (op.nrows(), op.ncols());
    let full = m.min(n);
    let mut target = match *mode {
        Truncation::RetainFraction(alpha) => ((alpha * n as f64) - 1e-9).ceil() as usize,
        Truncation::RetainCount(j) => j,
        Truncation::Threshold(_) => 32,
    }
    .clamp(1, full);

    loop {
        let block = (target + 1 + OVERSAMPLE).min(full);
        // A block covering most of the spectrum costs more than the dense route.
        if 2 * block > full {
            return Ok(dense_truncated(&op.to_dense(), mode));
        }
        let (u, values, v) = subspace_iteration(op, block, target + 1, seed)?;
        let j = match *mode {
            Truncation::Threshold(eps) => {
                let count = values.iter().take_while(|&&s| s > eps).count();
                if count > target {
                    target = (2 * target).min(full);
                    continue;
                }
                count.max(1)
            }
            _ => target,
        };
        let residual = values.get(j).copied().unwrap_or(0.0);
        return Ok(TruncatedSvd {
            u: u.columns(0, j).into_owned(),
            singular_values: values[..j].to_vec(),
            v: v.columns(0, j).into_owned(),
            residual,
        });
    }
}

/// Randomized subspace iteration; returns `block` approximate triplets, of
/// which the leading `tracked` are checked for convergence.
fn subspace_iteration(
    op: &dyn LinearOperator,
    block: usize,
    tracked: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<f64>, DMatrix<f64>)> {
    let n = op.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(n, block, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = orthonormalize(&op.apply(&omega));
    let mut previous: Option<Vec<f64>> = None;

    for iteration in 1..=MAX_ITERATIONS {
        let z = orthonormalize(&op.apply_transpose(&q));
        q = orthonormalize(&op.apply(&z));
        // B = Q^T A, formed as (A^T Q)^T.
        let b = op.apply_transpose(&q).transpose();
        let small = dense_svd(&b);
        let values = small.singular_values.clone();
        if values.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonConvergence {
                iterations: iteration,
                context: "non-finite singular values".into(),
            });
        }
        let scale = values.first().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
        let converged = previous.as_ref().is_some_and(|prev| {
            prev.iter()
                .zip(&values)
                .take(tracked)
                .all(|(a, b)| (a - b).abs() <= SOLVER_TOLERANCE * scale)
        });
        if converged {
            let mut u = &q * &small.u;
            let mut v = small.v.clone();
            fix_signs(&mut u, Some(&mut v));
            return Ok((u, values, v));
        }
        previous = Some(values);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        context: format!("block subspace iteration with {block} vectors"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseOperator;
    use crate::linalg::{max_abs, orthonormality_defect};

    #[test]
    fn diagonal_keeps_leading_axes() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0]));
        let svd = truncated_svd(&m, &Truncation::RetainCount(2), 0).unwrap();
        assert_eq!(svd.singular_values, vec![3.0, 2.0]);
        assert_eq!(svd.residual, 1.0);
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(max_abs(&(svd.u.abs() - expect)) < 1e-15);
    }

    #[test]
    fn rank_one_has_zero_residual() {
        let u = nalgebra::DVector::from_vec(vec![0.6, 0.8, 0.0]);
        let v = nalgebra::DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let m = &u * v.transpose();
        for j in 1..=3 {
            let svd = truncated_svd(&m, &Truncation::RetainCount(j), 0).unwrap();
            assert!(svd.residual.abs() < 1e-15, "j={j}: {}", svd.residual);
        }
    }

    #[test]
    fn fraction_rounds_up() {
        let vals = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(retained_rank(&Truncation::RetainFraction(0.5), 5, &vals), 3);
        assert_eq!(retained_rank(&Truncation::RetainFraction(0.01), 5, &vals), 1);
        assert_eq!(retained_rank(&Truncation::RetainFraction(0.7), 10, &[1.0; 10]), 7);
        assert_eq!(retained_rank(&Truncation::Threshold(2.5), 5, &vals), 3);
        assert_eq!(retained_rank(&Truncation::Threshold(9.0), 5, &vals), 1);
    }

    #[test]
    fn iterative_matches_dense_on_large_sparse() {
        // Block-diagonal operator with a decaying spectrum, above the dense limit.
        let n = 600;
        let mut trip = Vec::new();
        for i in 0..n {
            let s = 0.9f64.powi((i / 3) as i32);
            trip.push((i, i, s));
            if i + 1 < n && i % 3 != 2 {
                trip.push((i, i + 1, 0.1 * s));
            }
        }
        let sparse = SparseOperator::from_triplets(n, n, trip, 0.0).unwrap();
        let it = truncated_svd(&sparse, &Truncation::RetainCount(12), 7).unwrap();
        let dense = dense_svd(&sparse.to_dense());
        for k in 0..12 {
            let rel = (it.singular_values[k] - dense.singular_values[k]).abs() / dense.singular_values[0];
            assert!(rel < 1e-8, "k={k} rel={rel}");
        }
        assert!((it.residual - dense.singular_values[12]).abs() < 1e-7);
        assert!(orthonormality_defect(&it.u) < 1e-10);
        assert!(orthonormality_defect(&it.v) < 1e-10);
    }
}
