//! Dense commute times from the Laplacian pseudoinverse, for validation.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::LabeledGraph;
use crate::linalg::{symmetric_eigen_desc, LinearOperator};

pub const ORACLE_LIMIT: usize = 2000;

/// `CT(i, j) = vol (L+_ii + L+_jj - 2 L+_ij)` with `L = D - A`.
pub fn exact_commute_oracle(g: &LabeledGraph) -> Result<DMatrix<f64>> {
    let n = g.node_count();
    if n > ORACLE_LIMIT {
        return Err(Error::TooLarge(format!("{n} nodes exceeds the dense oracle limit of {ORACLE_LIMIT}")));
    }
    if g.components().len() != 1 {
        return Err(Error::Domain("commute times are infinite on a disconnected graph".into()));
    }
    let a = g.adjacency().to_dense();
    let degrees = g.degrees();
    let volume: f64 = degrees.iter().sum();
    let mut l = -a;
    for (i, d) in degrees.iter().enumerate() {
        l[(i, i)] += d;
    }
    let (values, vectors) = symmetric_eigen_desc(&l);
    let top = values.first().copied().unwrap_or(0.0).abs();
    let cutoff = 1e-10 * top.max(1.0);
    let mut pinv = DMatrix::zeros(n, n);
    for (k, lambda) in values.iter().enumerate() {
        if lambda.abs() > cutoff {
            let v = vectors.column(k);
            pinv += (v * v.transpose()) / *lambda;
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            volume * (pinv[(i, i)] + pinv[(j, j)] - 2.0 * pinv[(i, j)])
        }
    }))
}
