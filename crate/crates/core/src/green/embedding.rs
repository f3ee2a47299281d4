//! Factorization of the commute-time kernel into node coordinates.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::DegreeData;
use crate::linalg::{fix_signs, orthonormalize, symmetric_eigen_desc};

use super::{commute_matrix_from_kernel, GreenApprox};

/// Kernels up to this many nodes are decomposed densely.
pub const DENSE_EIGEN_LIMIT: usize = 1024;
const PSD_TOLERANCE: f64 = -1e-8;
const MAX_ITERATIONS: usize = 3000;
const OVERSAMPLE: usize = 10;

/// `d x N` coordinates; column `n` embeds node `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub coords: DMatrix<f64>,
    /// Kept kernel eigenvalues (after clamping), non-increasing.
    pub eigenvalues: Vec<f64>,
    /// First discarded kernel eigenvalue, 0 when `d = N`.
    pub residual_eigenvalue: f64,
    /// Depth of the chain the kernel came from.
    pub depth: usize,
}

impl EmbeddingMatrix {
    pub fn from_coords(coords: DMatrix<f64>) -> Self {
        Self {
            coords,
            eigenvalues: Vec::new(),
            residual_eigenvalue: 0.0,
            depth: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn node_count(&self) -> usize {
        self.coords.ncols()
    }

    pub fn squared_distance(&self, i: usize, j: usize) -> f64 {
        (self.coords.column(i) - self.coords.column(j)).norm_squared()
    }
}

/// Top-`d` factorization `Theta = diag(sqrt(lambda)) V^T` of the kernel
/// returned by [`GreenApprox::dense_kernel`]. Eigenvalues below zero are
/// clamped.
pub fn embedding_from_green(g: &GreenApprox, deg: &DegreeData, d: usize) -> Result<EmbeddingMatrix> {
    let n = g.dim();
    if d == 0 || d > n {
        return Err(Error::Domain(format!("embedding dimension {d} must lie in 1..={n}")));
    }
    let (values, vectors, residual) = if n <= DENSE_EIGEN_LIMIT {
        let kernel = g.dense_kernel(deg)?;
        let (values, vectors) = symmetric_eigen_desc(&kernel);
        let residual = values.get(d).copied().unwrap_or(0.0).max(0.0);
        (values[..d].to_vec(), vectors.columns(0, d).into_owned(), residual)
    } else {
        top_eigenpairs(g, deg, d)?
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("kernel has non-finite eigenvalues".into()));
    }
    let most_negative = values.iter().copied().fold(0.0f64, f64::min);
    if most_negative < PSD_TOLERANCE {
        warn!("kernel eigenvalue {most_negative:.3e} clamped to zero");
    }
    let kept: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let mut coords = vectors.transpose();
    for (r, v) in kept.iter().enumerate() {
        coords.row_mut(r).scale_mut(v.sqrt());
    }
    Ok(EmbeddingMatrix {
        coords,
        eigenvalues: kept,
        residual_eigenvalue: residual,
        depth: g.depth(),
    })
}

/// Block subspace iteration with Rayleigh-Ritz on the implicit kernel.
fn top_eigenpairs(g: &GreenApprox, deg: &DegreeData, d: usize) -> Result<(Vec<f64>, DMatrix<f64>, f64)> {
    let n = g.dim();
    let block = (d + 1 + OVERSAMPLE).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = orthonormalize(&DMatrix::from_fn(n, block, |_, _| rng.gen_range(-1.0..1.0)));
    let mut previous: Option<Vec<f64>> = None;
    for _ in 0..MAX_ITERATIONS {
        let z = g.apply_kernel(deg, &q);
        let h = q.tr_mul(&z);
        let h = (&h + h.transpose()) * 0.5;
        let (values, small) = symmetric_eigen_desc(&h);
        let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
        let converged = previous.as_ref().is_some_and(|p| {
            p.iter()
                .zip(&values)
                .take(d + 1)
                .all(|(a, b)| (a - b).abs() <= 1e-10 * scale)
        });
        if converged {
            let mut vectors = (&q * &small).columns(0, d).into_owned();
            fix_signs(&mut vectors, None);
            let residual = values.get(d).copied().unwrap_or(0.0).max(0.0);
            return Ok((values[..d].to_vec(), vectors, residual));
        }
        previous = Some(values);
        q = orthonormalize(&z);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        context: format!("kernel eigenvectors, block of {block}"),
    })
}

/// Empirical distance-bound report: how far squared embedding distances are
/// from the commute times of the same Green function, in units of
/// `sigma_{d+1} vol / min d_i` (the first discarded kernel eigenvalue).
#[derive(Debug, Clone, Serialize)]
pub struct JlReport {
    pub max_abs_error: f64,
    pub bound_unit: f64,
    /// `max_abs_error / bound_unit`; 0 when both vanish.
    pub constant: f64,
}

pub fn jl_report(emb: &EmbeddingMatrix, g: &GreenApprox, deg: &DegreeData) -> Result<JlReport> {
    let ct = commute_matrix_from_kernel(&g.dense_kernel(deg)?);
    let n = emb.node_count();
    if ct.nrows() != n {
        return Err(Error::Dimension("embedding and Green function sizes differ".into()));
    }
    let mut max_abs_error = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_abs_error = max_abs_error.max((emb.squared_distance(i, j) - ct[(i, j)]).abs());
        }
    }
    let bound_unit = emb.residual_eigenvalue;
    let constant = if bound_unit > 0.0 {
        max_abs_error / bound_unit
    } else if max_abs_error <= 1e-9 * ct.amax().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(JlReport {
        max_abs_error,
        bound_unit,
        constant,
    })
}
