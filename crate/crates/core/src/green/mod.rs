//! Green function of the deflated walk and commute times.
//!
//! With the stationary projection removed, `T_d = T - 1 pi^T` has spectral
//! radius below one on connected non-bipartite graphs and
//!
//! ```text
//! G_K = prod_{k=0}^{K} (I + T_d^{2^k}) = sum_{m=0}^{2^{K+1}-1} T_d^m  ->  (I - T_d)^{-1}.
//! ```
//!
//! Each factor with `k >= 1` is taken from the compressed chain, lifted as
//! `L_k T_k L_k^T`. Folding the factors from the coarsest level up gives
//!
//! ```text
//! r_K = T_K,   r_k = T_k + (I + T_k) B_{k+1} r_{k+1} B_{k+1}^T
//! G   = I + T_d + (I + T_d) U_1 r_1 U_1^T
//! ```
//!
//! where `B_k` are the level-relative bases. Commute times follow from the
//! symmetrized kernel `G D^{-1}`:
//! `CT(i, j) = vol (G_ii/d_i + G_jj/d_j - G_ij/d_j - G_ji/d_i)`.

mod embedding;
mod oracle;

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use embedding::{embedding_from_green, jl_report, EmbeddingMatrix, JlReport, DENSE_EIGEN_LIMIT};
pub use oracle::{exact_commute_oracle, ORACLE_LIMIT};

use crate::error::{Error, Result};
use crate::graph::DegreeData;
use crate::linalg::LinearOperator;
use crate::multiscale::{build_chain, BasisChain, ChainConfig, CompressedOperator};

/// Spectral radius at or above this is treated as one.
pub const RADIUS_TOLERANCE: f64 = 1.0 - 1e-6;
const DENSE_RADIUS_LIMIT: usize = 512;
const POWER_ITERATIONS: usize = 2000;

/// `T - 1 pi^T`, applied without forming the rank-one correction.
#[derive(Clone)]
pub struct DeflatedOperator {
    inner: Arc<dyn LinearOperator>,
    stationary: DVector<f64>,
}

impl std::fmt::Debug for DeflatedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeflatedOperator")
            .field("dim", &self.inner.nrows())
            .finish_non_exhaustive()
    }
}

impl DeflatedOperator {
    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    pub fn inner(&self) -> &Arc<dyn LinearOperator> {
        &self.inner
    }
}

impl LinearOperator for DeflatedOperator {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self.inner.apply(x);
        // Subtract 1 (pi^T x) column by column.
        let weights = x.tr_mul(&self.stationary);
        for (c, w) in weights.iter().enumerate() {
            y.column_mut(c).add_scalar_mut(-w);
        }
        y
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = self.inner.apply_transpose(x);
        for c in 0..x.ncols() {
            let s = x.column(c).sum();
            y.column_mut(c).axpy(-s, &self.stationary, 1.0);
        }
        y
    }

    fn entry(&self, row: usize, col: usize) -> f64 {
        self.inner.entry(row, col) - self.stationary[col]
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let mut m = self.inner.to_dense();
        for mut row in m.row_iter_mut() {
            row -= self.stationary.transpose();
        }
        m
    }

    fn is_sparse(&self) -> bool {
        self.inner.is_sparse()
    }
}

/// Wraps `t` as `t - 1 pi^T` after checking that `pi` is a left fixed point.
pub fn deflate_stationary(t: Arc<dyn LinearOperator>, stationary: &[f64]) -> Result<DeflatedOperator> {
    let n = t.nrows();
    if t.ncols() != n || stationary.len() != n {
        return Err(Error::Dimension(format!(
            "operator is {}x{} but the stationary vector has {} entries",
            n,
            t.ncols(),
            stationary.len()
        )));
    }
    let pi = DMatrix::from_column_slice(n, 1, stationary);
    let left = t.apply_transpose(&pi);
    let defect = (left - &pi).amax();
    if !(defect <= 1e-8) {
        return Err(Error::Domain(format!(
            "stationary vector is not a left fixed point (defect {defect:.3e})"
        )));
    }
    Ok(DeflatedOperator {
        inner: t,
        stationary: DVector::from_column_slice(stationary),
    })
}

/// Estimate of the spectral radius of `op`.
///
/// Small operators use the real Schur form; larger ones run power iteration
/// on `op^2`, which also converges when the dominant eigenvalues come in a
/// `+-lambda` pair.
pub fn spectral_radius_estimate(op: &dyn LinearOperator, seed: u64) -> Result<f64> {
    let n = op.nrows();
    if n != op.ncols() {
        return Err(Error::Dimension("spectral radius needs a square operator".into()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_RADIUS_LIMIT {
        let dense = op.to_dense();
        if let Some(schur) = dense.try_schur(1e-14, 10_000) {
            let radius = schur
                .complex_eigenvalues()
                .iter()
                .fold(0.0f64, |acc, z| acc.max(z.norm()));
            return Ok(radius);
        }
        debug!("Schur iteration failed, falling back to power iteration");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::from_fn(n, 1, |_, _| rng.gen_range(-1.0..1.0));
    x /= x.norm();
    let mut estimate = 0.0;
    for iteration in 0..POWER_ITERATIONS {
        let y = op.apply(&op.apply(&x));
        let norm = y.norm();
        if !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iteration,
                context: "power iteration produced non-finite values".into(),
            });
        }
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = norm.sqrt();
        x = y / norm;
        if iteration > 10 && (next - estimate).abs() <= 1e-12 * next.max(1.0) {
            return Ok(next);
        }
        estimate = next;
    }
    Ok(estimate)
}

/// Compressed Green function `G_K` over a basis chain.
#[derive(Clone)]
pub struct GreenApprox {
    op: Arc<dyn LinearOperator>,
    chain: BasisChain,
    operators: Vec<CompressedOperator>,
    /// `U_1`, `N x j_1` (empty when the chain has no levels).
    u1: DMatrix<f64>,
    /// `(I + T_d) U_1 r_1`, `N x j_1`.
    wr: DMatrix<f64>,
    time_scale: f64,
}

impl std::fmt::Debug for GreenApprox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GreenApprox")
            .field("dims", &self.chain.dimensions())
            .field("time_scale", &self.time_scale)
            .finish_non_exhaustive()
    }
}

/// Builds the chain for `op` and folds it into `G_K`.
///
/// `op` must already be deflated; its spectral radius is checked first.
pub fn schultz_green(op: Arc<dyn LinearOperator>, config: &ChainConfig) -> Result<GreenApprox> {
    let radius = spectral_radius_estimate(op.as_ref(), config.seed)?;
    if radius >= RADIUS_TOLERANCE {
        return Err(Error::Divergence(format!(
            "spectral radius {radius:.9} of the deflated walk is not below 1; \
             the graph is bipartite or disconnected (use the lazy walk option)"
        )));
    }
    let (chain, operators) = build_chain(op.as_ref(), config)?;
    GreenApprox::from_chain(op, chain, operators)
}

impl GreenApprox {
    /// Folds an existing chain (for example one read from a cache).
    pub fn from_chain(
        op: Arc<dyn LinearOperator>,
        chain: BasisChain,
        operators: Vec<CompressedOperator>,
    ) -> Result<Self> {
        let n = op.nrows();
        if chain.original_dim != n || operators.len() != chain.depth() {
            return Err(Error::Dimension(format!(
                "chain for dimension {} with {} operators does not fit a {n}-dimensional operator",
                chain.original_dim,
                operators.len()
            )));
        }
        for (k, (b, t)) in chain.bases.iter().zip(&operators).enumerate() {
            if t.matrix.nrows() != b.ncols() || t.matrix.ncols() != b.ncols() {
                return Err(Error::Dimension(format!("level {} operator does not match its basis", k + 1)));
            }
        }
        let depth = chain.depth();
        let (u1, wr) = if depth == 0 {
            (DMatrix::zeros(n, 0), DMatrix::zeros(n, 0))
        } else {
            let mut r = operators[depth - 1].matrix.clone();
            for k in (1..depth).rev() {
                let t = &operators[k - 1].matrix;
                let b = &chain.bases[k];
                let inner = b * &r * b.transpose();
                r = t + &inner + t * &inner;
            }
            let u1 = chain.bases[0].clone();
            let w = &u1 + op.apply(&u1);
            let wr = w * r;
            (u1, wr)
        };
        Ok(Self {
            op,
            chain,
            operators,
            u1,
            wr,
            time_scale: 1.0,
        })
    }

    /// Multiplier applied to every commute time (0.5 for the lazy walk).
    pub fn with_time_scale(mut self, scale: f64) -> Self {
        self.time_scale = scale;
        self
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn dim(&self) -> usize {
        self.op.nrows()
    }

    pub fn depth(&self) -> usize {
        self.chain.depth()
    }

    pub fn chain(&self) -> &BasisChain {
        &self.chain
    }

    pub fn operators(&self) -> &[CompressedOperator] {
        &self.operators
    }

    pub fn operator(&self) -> &Arc<dyn LinearOperator> {
        &self.op
    }

    /// `G(a, b)`.
    pub fn entry(&self, a: usize, b: usize) -> f64 {
        let mut g = self.op.entry(a, b);
        if a == b {
            g += 1.0;
        }
        for c in 0..self.u1.ncols() {
            g += self.wr[(a, c)] * self.u1[(b, c)];
        }
        g
    }

    /// `G x`
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x + self.op.apply(x);
        if self.u1.ncols() > 0 {
            y += &self.wr * self.u1.tr_mul(x);
        }
        y
    }

    /// `G^T x`
    pub fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x + self.op.apply_transpose(x);
        if self.u1.ncols() > 0 {
            y += &self.u1 * self.wr.tr_mul(x);
        }
        y
    }

    /// Dense `G`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut g = self.op.to_dense() + DMatrix::<f64>::identity(n, n);
        if self.u1.ncols() > 0 {
            g += &self.wr * self.u1.transpose();
        }
        g
    }

    /// Dense commute-time kernel `vol * sym((G - 1 pi^T) D^{-1}) * time_scale`.
    ///
    /// The `m = 0` term of the deflated series carries the stationary
    /// projection `1 pi^T`, which only adds `1 1^T` to `vol G D^{-1}`. It
    /// cancels in every commute time, so it is removed here to keep the
    /// constant direction out of the embedding. Squared distances under this
    /// Gram matrix are commute times.
    pub fn dense_kernel(&self, deg: &DegreeData) -> Result<DMatrix<f64>> {
        self.check_degrees(deg)?;
        let g = self.to_dense();
        let n = self.dim();
        let scale = deg.volume * self.time_scale;
        Ok(DMatrix::from_fn(n, n, |a, b| {
            0.5 * scale * (g[(a, b)] / deg.degrees[b] + g[(b, a)] / deg.degrees[a]) - self.time_scale
        }))
    }

    /// Kernel applied to a block, without forming it.
    pub fn apply_kernel(&self, deg: &DegreeData, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut scaled = x.clone();
        for (r, d) in deg.degrees.iter().enumerate() {
            scaled.row_mut(r).scale_mut(1.0 / d);
        }
        let mut y = self.apply(&scaled);
        let mut back = self.apply_transpose(x);
        for (r, d) in deg.degrees.iter().enumerate() {
            back.row_mut(r).scale_mut(1.0 / d);
        }
        y += back;
        let mut y = y * (0.5 * deg.volume * self.time_scale);
        for c in 0..x.ncols() {
            let s = x.column(c).sum() * self.time_scale;
            y.column_mut(c).add_scalar_mut(-s);
        }
        y
    }

    fn check_degrees(&self, deg: &DegreeData) -> Result<()> {
        if deg.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "{} degrees for a {}-node Green function",
                deg.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Commute time between nodes `i` and `j`.
pub fn commute_time(g: &GreenApprox, i: usize, j: usize, deg: &DegreeData) -> Result<f64> {
    let n = g.dim();
    g.check_degrees(deg)?;
    for &x in &[i, j] {
        if x >= n {
            return Err(Error::IndexOutOfRange(format!("node {x} outside 0..{n}")));
        }
    }
    if i == j {
        return Err(Error::Domain(format!("commute time needs two distinct nodes, got ({i}, {i})")));
    }
    // Evaluate in a fixed order so that CT(i, j) and CT(j, i) are bit-identical.
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    let (da, db) = (deg.degrees[a], deg.degrees[b]);
    let value = g.entry(a, a) / da + g.entry(b, b) / db - g.entry(a, b) / db - g.entry(b, a) / da;
    Ok(deg.volume * value * g.time_scale)
}

/// All-pairs commute times from a dense kernel.
pub fn commute_matrix_from_kernel(kernel: &DMatrix<f64>) -> DMatrix<f64> {
    let n = kernel.nrows();
    DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            kernel[(a, a)] + kernel[(b, b)] - kernel[(a, b)] - kernel[(b, a)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{transition_matrix, LabeledGraph};
    use crate::linalg::max_abs;
    use crate::multiscale::Truncation;

    fn graph(n: usize, edges: &[(usize, usize)]) -> LabeledGraph {
        LabeledGraph::from_edges(n, edges.iter().map(|&(i, j)| (i, j, 1.0)), None).unwrap()
    }

    fn green_for(g: &LabeledGraph, levels: usize) -> (GreenApprox, DegreeData) {
        let (t, deg) = transition_matrix(g).unwrap();
        let d = deflate_stationary(Arc::new(t), &deg.stationary).unwrap();
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), levels).unwrap();
        (schultz_green(Arc::new(d), &cfg).unwrap(), deg)
    }

    #[test]
    fn deflated_triangle_entries() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let (t, deg) = transition_matrix(&g).unwrap();
        let d = deflate_stationary(Arc::new(t), &deg.stationary).unwrap();
        assert!((d.entry(0, 0) + 1.0 / 3.0).abs() < 1e-15);
        assert!((d.entry(0, 1) - 1.0 / 6.0).abs() < 1e-15);
        let dense = d.to_dense();
        for r in 0..3 {
            assert!(dense.row(r).sum().abs() < 1e-12);
        }
        let x = DMatrix::from_fn(3, 2, |r, c| (r + 2 * c) as f64);
        assert!(max_abs(&(d.apply(&x) - &dense * &x)) < 1e-14);
        assert!(max_abs(&(d.apply_transpose(&x) - dense.tr_mul(&x))) < 1e-14);
    }

    #[test]
    fn deflation_rejects_wrong_stationary() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let (t, _) = transition_matrix(&g).unwrap();
        assert!(matches!(
            deflate_stationary(Arc::new(t), &[1.0 / 3.0; 3]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn bipartite_edge_has_radius_one() {
        let g = graph(2, &[(0, 1)]);
        let (t, deg) = transition_matrix(&g).unwrap();
        let d = deflate_stationary(Arc::new(t), &deg.stationary).unwrap();
        let radius = spectral_radius_estimate(&d, 0).unwrap();
        assert!((radius - 1.0).abs() < 1e-10);
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), 2).unwrap();
        assert!(matches!(schultz_green(Arc::new(d), &cfg), Err(Error::Divergence(_))));
    }

    #[test]
    fn power_iteration_finds_plus_minus_pair() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, -0.7, 0.2]));
        let sparse = crate::graph::SparseOperator::from_dense(&m, 0.0);
        // Force the iterative path by going through a large block-diagonal copy.
        let big = crate::graph::SparseOperator::from_triplets(
            600,
            600,
            (0..600).map(|i| (i, i, sparse.get(i % 3, i % 3))),
            0.0,
        )
        .unwrap();
        let r = spectral_radius_estimate(&big, 3).unwrap();
        assert!((r - 0.7).abs() < 1e-9, "{r}");
    }

    #[test]
    fn diagonal_geometric_series() {
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.25]));
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), 2).unwrap();
        let g = schultz_green(Arc::new(t), &cfg).unwrap().to_dense();
        assert!((g[(0, 0)] - 1.9921875).abs() < 1e-14);
        assert!((g[(1, 1)] - 0.79998779296875).abs() < 1e-14);
        assert!(g[(0, 1)].abs() < 1e-15 && g[(1, 0)].abs() < 1e-15);
    }

    #[test]
    fn zero_operator_gives_identity() {
        for levels in 1..4 {
            let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), levels).unwrap();
            let g = schultz_green(Arc::new(DMatrix::<f64>::zeros(3, 3)), &cfg).unwrap();
            assert_eq!(g.to_dense(), DMatrix::<f64>::identity(3, 3));
        }
    }

    #[test]
    fn triangle_green_matches_inverse() {
        let g = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let (green, _) = green_for(&g, 10);
        let td = green.operator().to_dense();
        let inv = (DMatrix::<f64>::identity(3, 3) - td).try_inverse().unwrap();
        assert!(max_abs(&(green.to_dense() - inv)) < 1e-6);
    }

    #[test]
    fn anchor_commute_times() {
        let k3 = graph(3, &[(0, 1), (1, 2), (0, 2)]);
        let (g, deg) = green_for(&k3, 12);
        assert!((commute_time(&g, 0, 1, &deg).unwrap() - 4.0).abs() < 1e-8);

        let c5 = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let (g, deg) = green_for(&c5, 12);
        assert!((commute_time(&g, 0, 1, &deg).unwrap() - 8.0).abs() < 1e-8);
        assert!((commute_time(&g, 0, 2, &deg).unwrap() - 12.0).abs() < 1e-8);
    }

    #[test]
    fn commute_time_symmetric_and_validated() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]);
        let (green, deg) = green_for(&g, 8);
        assert_eq!(
            commute_time(&green, 1, 3, &deg).unwrap(),
            commute_time(&green, 3, 1, &deg).unwrap()
        );
        assert!(matches!(commute_time(&green, 2, 2, &deg), Err(Error::Domain(_))));
        assert!(matches!(commute_time(&green, 0, 9, &deg), Err(Error::IndexOutOfRange(_))));
    }

    #[test]
    fn kernel_apply_matches_dense() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 2)]);
        let (green, deg) = green_for(&g, 6);
        let k = green.dense_kernel(&deg).unwrap();
        let x = DMatrix::from_fn(5, 2, |r, c| (r as f64 - c as f64).sin());
        assert!(max_abs(&(green.apply_kernel(&deg, &x) - &k * &x)) < 1e-10);
        assert!(max_abs(&(&k - k.transpose())) < 1e-12);
    }

    #[test]
    fn depth_zero_chain_is_first_two_terms() {
        let t = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let chain = BasisChain {
            original_dim: 2,
            bases: vec![],
            retained: vec![],
            residuals: vec![],
        };
        let g = GreenApprox::from_chain(Arc::new(t.clone()), chain, vec![]).unwrap();
        assert!(max_abs(&(g.to_dense() - (DMatrix::<f64>::identity(2, 2) + t))) < 1e-15);
    }
}
