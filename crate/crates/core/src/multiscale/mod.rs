//! Multiscale compression of dyadic powers of a walk operator.
//!
//! Each level orthonormalizes the range of the previous compressed operator
//! and represents its square in the new basis:
//!
//! ```text
//! U_k = range basis of T_{k-1}        (truncated SVD, or pivoted QR for DWA)
//! T_k = U_k^T T_{k-1}^2 U_k           (≈ T^{2^k} in lifted coordinates)
//! ```
//!
//! Bases are stored relative to the previous level; [`lift_to_original`]
//! multiplies them out.

mod cache;
mod dwa;
mod svd;

use log::info;
use nalgebra::{DMatrix, DVector};

pub use cache::{read_chain_cache, write_chain_cache, CACHE_MAGIC, CACHE_VERSION};
pub use dwa::{dwa_compress_step, pivoted_gram_schmidt};
pub use svd::{truncated_svd, TruncatedSvd, DENSE_LIMIT, SOLVER_TOLERANCE};

use crate::error::{Error, Result};
use crate::linalg::{fix_signs, orthonormalize, LinearOperator};

/// How many singular directions a level keeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Keep `ceil(alpha * dim)` (at least one), `alpha` in (0, 1].
    RetainFraction(f64),
    /// Keep singular values strictly above `eps`, at least one.
    Threshold(f64),
    /// Keep exactly `j` (clamped to the available rank).
    RetainCount(usize),
}

impl Truncation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Truncation::RetainFraction(a) if !(a > 0.0 && a <= 1.0) => {
                Err(Error::Domain(format!("retain fraction {a} must lie in (0, 1]")))
            }
            Truncation::Threshold(e) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::Domain(format!("threshold {e} must be positive")))
            }
            Truncation::RetainCount(0) => Err(Error::Domain("retain count must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy {
    pub mode: Truncation,
    pub levels: usize,
}

impl TruncationPolicy {
    pub fn new(mode: Truncation, levels: usize) -> Result<Self> {
        mode.validate()?;
        if levels == 0 {
            return Err(Error::Domain("at least one level is required".into()));
        }
        Ok(Self { mode, levels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Svd,
    /// Diffusion-wavelet style: pivoted Gram-Schmidt up to a threshold.
    Dwa,
}

/// Where the squaring happens relative to the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Squaring {
    /// `T_k = U^T T_{k-1}^2 U`
    #[default]
    ProjectSquare,
    /// `T_k = (U^T T_{k-1} U)^2`
    SquareProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub policy: TruncationPolicy,
    pub backend: Backend,
    pub squaring: Squaring,
    /// Basis entries below this magnitude are zeroed (then re-orthonormalized).
    pub drop_tolerance: Option<f64>,
    pub seed: u64,
}

impl ChainConfig {
    pub fn svd(mode: Truncation, levels: usize) -> Result<Self> {
        Ok(Self {
            policy: TruncationPolicy::new(mode, levels)?,
            backend: Backend::Svd,
            squaring: Squaring::ProjectSquare,
            drop_tolerance: None,
            seed: 0,
        })
    }

    pub fn dwa(epsilon: f64, levels: usize) -> Result<Self> {
        Ok(Self {
            policy: TruncationPolicy::new(Truncation::Threshold(epsilon), levels)?,
            backend: Backend::Dwa,
            squaring: Squaring::ProjectSquare,
            drop_tolerance: None,
            seed: 0,
        })
    }
}

/// Compressed operator `T_k` at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedOperator {
    pub level: usize,
    pub matrix: DMatrix<f64>,
}

impl CompressedOperator {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Result of one compression level.
#[derive(Debug, Clone)]
pub struct CompressionStep {
    /// New basis in the previous level's coordinates.
    pub basis: DMatrix<f64>,
    pub operator: DMatrix<f64>,
    /// Retained singular values (SVD) or pivot magnitudes (DWA).
    pub retained: Vec<f64>,
    /// First discarded singular value / pivot magnitude, 0 if none.
    pub residual: f64,
}

/// Orthonormal bases `[U_k]_{U_{k-1}}` for levels `1..=depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisChain {
    pub original_dim: usize,
    pub bases: Vec<DMatrix<f64>>,
    pub retained: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl BasisChain {
    pub fn depth(&self) -> usize {
        self.bases.len()
    }

    /// Dimension of each level, starting with the original space.
    pub fn dimensions(&self) -> Vec<usize> {
        std::iter::once(self.original_dim)
            .chain(self.bases.iter().map(|b| b.ncols()))
            .collect()
    }
}

/// One SVD compression level: basis from the truncated SVD of `prev`, then
/// the square of `prev` represented in that basis. Sparse operators are never
/// squared explicitly; `prev * (prev * U)` costs two products per column.
pub fn compress_step(
    prev: &dyn LinearOperator,
    mode: &Truncation,
    squaring: Squaring,
    drop_tolerance: Option<f64>,
    seed: u64,
) -> Result<CompressionStep> {
    if prev.nrows() != prev.ncols() {
        return Err(Error::Dimension(format!(
            "compression needs a square operator, got {}x{}",
            prev.nrows(),
            prev.ncols()
        )));
    }
    let svd = truncated_svd(prev, mode, seed)?;
    let basis = match drop_tolerance {
        Some(tol) => sparsify_basis(&svd.u, tol),
        None => svd.u,
    };
    let operator = square_in_basis(prev, &basis, squaring);
    Ok(CompressionStep {
        basis,
        operator,
        retained: svd.singular_values,
        residual: svd.residual,
    })
}

pub(crate) fn square_in_basis(prev: &dyn LinearOperator, basis: &DMatrix<f64>, squaring: Squaring) -> DMatrix<f64> {
    let image = prev.apply(basis);
    match squaring {
        Squaring::ProjectSquare => basis.tr_mul(&prev.apply(&image)),
        Squaring::SquareProjection => {
            let p = basis.tr_mul(&image);
            &p * &p
        }
    }
}

fn sparsify_basis(u: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let zeroed = u.map(|x| if x.abs() < tol { 0.0 } else { x });
    let mut q = orthonormalize(&zeroed);
    // Keep the orientation of the original columns.
    for c in 0..q.ncols() {
        if q.column(c).dot(&u.column(c)) < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}

/// Applies `config.policy.levels` compression steps to `op`.
///
/// Stops early once a level's dimension reaches 1; the returned chain's
/// depth is the number of levels actually built.
pub fn build_chain(op: &dyn LinearOperator, config: &ChainConfig) -> Result<(BasisChain, Vec<CompressedOperator>)> {
    if op.nrows() != op.ncols() {
        return Err(Error::Dimension("chain needs a square operator".into()));
    }
    let epsilon = match (config.backend, config.policy.mode) {
        (Backend::Dwa, Truncation::Threshold(e)) => Some(e),
        (Backend::Dwa, other) => {
            return Err(Error::Domain(format!(
                "the DWA backend needs a threshold, got {other:?}"
            )))
        }
        (Backend::Svd, _) => None,
    };
    let mut chain = BasisChain {
        original_dim: op.nrows(),
        bases: Vec::new(),
        retained: Vec::new(),
        residuals: Vec::new(),
    };
    let mut operators: Vec<CompressedOperator> = Vec::new();

    for level in 1..=config.policy.levels {
        let step = {
            let current: &dyn LinearOperator = match operators.last() {
                Some(c) => &c.matrix,
                None => op,
            };
            if current.nrows() <= 1 {
                info!(
                    "chain stopped at depth {} of {}: dimension collapsed to {}",
                    level - 1,
                    config.policy.levels,
                    current.nrows()
                );
                break;
            }
            let seed = config.seed.wrapping_add(level as u64);
            match epsilon {
                Some(eps) => {
                    let mut s = dwa_compress_step(current, eps)?;
                    if config.squaring == Squaring::SquareProjection {
                        s.operator = square_in_basis(current, &s.basis, Squaring::SquareProjection);
                    }
                    s
                }
                None => compress_step(current, &config.policy.mode, config.squaring, config.drop_tolerance, seed)?,
            }
        };
        if step.operator.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("level {level} produced non-finite entries")));
        }
        chain.bases.push(step.basis);
        chain.retained.push(step.retained);
        chain.residuals.push(step.residual);
        operators.push(CompressedOperator {
            level,
            matrix: step.operator,
        });
    }
    Ok((chain, operators))
}

/// `[U_k]_{U_0} = [U_1]_{U_0} ... [U_k]_{U_{k-1}}`
pub fn lift_to_original(chain: &BasisChain, level: usize) -> Result<DMatrix<f64>> {
    if level == 0 || level > chain.depth() {
        return Err(Error::IndexOutOfRange(format!(
            "level {level} outside 1..={}",
            chain.depth()
        )));
    }
    let mut lifted = chain.bases[0].clone();
    for b in &chain.bases[1..level] {
        lifted = lifted * b;
    }
    Ok(lifted)
}

/// `L_k T_k L_k^T` in original coordinates.
pub fn lift_operator(chain: &BasisChain, op: &CompressedOperator) -> Result<DMatrix<f64>> {
    let l = lift_to_original(chain, op.level)?;
    Ok(&l * &op.matrix * l.transpose())
}

/// `|| U U^T w - w ||_2`: how far `w` is from the span of the orthonormal
/// columns of `u`.
pub fn epsilon_span_residual(u: &DMatrix<f64>, w: &DVector<f64>) -> Result<f64> {
    if u.nrows() != w.len() {
        return Err(Error::Dimension(format!(
            "basis has {} rows but the vector has {} entries",
            u.nrows(),
            w.len()
        )));
    }
    let projected = u * u.tr_mul(w);
    Ok((projected - w).norm())
}

/// Sign-normalized copy of a basis; used when comparing bases from different
/// routes.
pub fn canonical_signs(u: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = u.clone();
    fix_signs(&mut out, None);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, orthonormality_defect};

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(v.to_vec()))
    }

    #[test]
    fn diagonal_step_squares_retained_part() {
        let step = compress_step(
            &diag(&[0.9, 0.5, 0.1]),
            &Truncation::RetainCount(2),
            Squaring::ProjectSquare,
            None,
            0,
        )
        .unwrap();
        assert_eq!(step.basis.shape(), (3, 2));
        assert!(max_abs(&(step.operator - diag(&[0.81, 0.25]))) < 1e-15);
        assert_eq!(step.residual, 0.1);
    }

    #[test]
    fn retain_one_gives_scalar() {
        let step = compress_step(
            &diag(&[0.9, 0.5]),
            &Truncation::RetainCount(1),
            Squaring::ProjectSquare,
            None,
            0,
        )
        .unwrap();
        assert_eq!(step.operator.shape(), (1, 1));
        assert!((step.operator[(0, 0)] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn chain_without_truncation_is_exact_on_diagonal() {
        let cfg = ChainConfig::svd(Truncation::RetainFraction(1.0), 2).unwrap();
        let (chain, ops) = build_chain(&diag(&[0.9, 0.5, 0.1]), &cfg).unwrap();
        assert_eq!(chain.depth(), 2);
        let lifted = lift_operator(&chain, &ops[1]).unwrap();
        let want = diag(&[0.9f64.powi(4), 0.5f64.powi(4), 0.1f64.powi(4)]);
        assert!(max_abs(&(lifted - want)) < 1e-15);
    }

    #[test]
    fn chain_stops_when_dimension_collapses() {
        let cfg = ChainConfig::svd(Truncation::RetainFraction(0.5), 10).unwrap();
        let (chain, ops) = build_chain(&diag(&[0.9, 0.8, 0.7, 0.6]), &cfg).unwrap();
        assert_eq!(chain.dimensions(), vec![4, 2, 1]);
        assert_eq!(ops.len(), 2);
    }

    #[test]
    fn single_level_matches_compress_step() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.3, 0.1, 0.6, 0.3, 0.2, 0.2, 0.6]);
        let cfg = ChainConfig::svd(Truncation::RetainCount(2), 1).unwrap();
        let (chain, ops) = build_chain(&m, &cfg).unwrap();
        let step = compress_step(&m, &Truncation::RetainCount(2), Squaring::ProjectSquare, None, 1).unwrap();
        assert_eq!(chain.bases[0], step.basis);
        assert_eq!(ops[0].matrix, step.operator);
    }

    #[test]
    fn lift_level_one_is_first_basis() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.3, 0.1, 0.6, 0.3, 0.2, 0.2, 0.6]);
        let cfg = ChainConfig::svd(Truncation::RetainCount(2), 2).unwrap();
        let (chain, _) = build_chain(&m, &cfg).unwrap();
        assert_eq!(lift_to_original(&chain, 1).unwrap(), chain.bases[0]);
        assert!(orthonormality_defect(&lift_to_original(&chain, 2).unwrap()) < 1e-12);
        assert!(lift_to_original(&chain, 0).is_err());
        assert!(lift_to_original(&chain, 3).is_err());
    }

    #[test]
    fn identity_chain_lifts_to_identity_prefix() {
        let chain = BasisChain {
            original_dim: 3,
            bases: vec![DMatrix::identity(3, 3), DMatrix::identity(3, 2)],
            retained: vec![vec![1.0; 3], vec![1.0; 2]],
            residuals: vec![0.0, 0.0],
        };
        assert_eq!(lift_to_original(&chain, 2).unwrap(), DMatrix::<f64>::identity(3, 2));
    }

    #[test]
    fn epsilon_span_examples() {
        let e1 = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let w = DVector::from_vec(vec![0.6, 0.8]);
        assert!((epsilon_span_residual(&e1, &w).unwrap() - 0.8).abs() < 1e-15);
        let inside = DVector::from_vec(vec![-2.0, 0.0]);
        assert!(epsilon_span_residual(&e1, &inside).unwrap() < 1e-12);
        assert!(matches!(
            epsilon_span_residual(&e1, &DVector::from_vec(vec![1.0, 2.0, 3.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn square_projection_variant_differs_under_truncation() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, 0.3, 0.1, 0.6, 0.3, 0.2, 0.2, 0.6]);
        let a = compress_step(&m, &Truncation::RetainCount(2), Squaring::ProjectSquare, None, 0).unwrap();
        let b = compress_step(&m, &Truncation::RetainCount(2), Squaring::SquareProjection, None, 0).unwrap();
        assert_eq!(a.basis, b.basis);
        assert!(max_abs(&(a.operator - b.operator)) > 1e-6);
    }

    #[test]
    fn drop_tolerance_keeps_orthonormal_basis() {
        let m = DMatrix::from_fn(6, 6, |r, c| 1.0 / (1.0 + (r as f64 - c as f64).abs()));
        let step = compress_step(&m, &Truncation::RetainCount(3), Squaring::ProjectSquare, Some(0.05), 0).unwrap();
        assert!(orthonormality_defect(&step.basis) < 1e-12);
    }

    #[test]
    fn dwa_backend_requires_threshold() {
        let mut cfg = ChainConfig::svd(Truncation::RetainFraction(0.5), 1).unwrap();
        cfg.backend = Backend::Dwa;
        assert!(build_chain(&diag(&[0.9, 0.5]), &cfg).is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(TruncationPolicy::new(Truncation::RetainFraction(0.0), 1).is_err());
        assert!(TruncationPolicy::new(Truncation::RetainFraction(1.5), 1).is_err());
        assert!(TruncationPolicy::new(Truncation::Threshold(-1.0), 1).is_err());
        assert!(TruncationPolicy::new(Truncation::RetainFraction(0.5), 0).is_err());
        assert!(TruncationPolicy::new(Truncation::RetainFraction(1.0), 3).is_ok());
    }
}
