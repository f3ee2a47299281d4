//! Dense helpers and the operator abstraction shared by the sparse and
//! compressed representations.

use faer::{Mat, Side};
use nalgebra::{DMatrix, DVector};

/// A real linear map that can be applied to blocks of column vectors.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `A * x`
    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// `A^T * x`
    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64>;

    /// Single entry `A[row, col]`.
    fn entry(&self, row: usize, col: usize) -> f64;

    fn to_dense(&self) -> DMatrix<f64>;

    /// Whether products should be preferred over materializing the matrix.
    fn is_sparse(&self) -> bool {
        false
    }
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self * x
    }

    fn apply_transpose(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(x)
    }

    fn entry(&self, row: usize, col: usize) -> f64 {
        self[(row, col)]
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

/// Thin singular value decomposition with singular values sorted in
/// decreasing order and the deterministic sign convention applied.
#[derive(Debug, Clone)]
pub struct DenseSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn dense_svd(m: &DMatrix<f64>) -> DenseSvd {
    // nalgebra's bidiagonal SVD can return an inaccurate factorization for
    // matrices with clustered singular values, so the dense work goes to faer.
    let k = m.nrows().min(m.ncols());
    if k == 0 {
        return DenseSvd {
            u: DMatrix::zeros(m.nrows(), 0),
            singular_values: Vec::new(),
            v: DMatrix::zeros(m.ncols(), 0),
        };
    }
    let svd = to_faer(m).thin_svd().expect("SVD of a finite matrix");
    let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
    let u = DMatrix::from_fn(m.nrows(), k, |r, c| fu[(r, c)]);
    let v = DMatrix::from_fn(m.ncols(), k, |r, c| fv[(r, c)]);
    let values: Vec<f64> = (0..k).map(|c| fs[c]).collect();

    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));

    let mut su = DMatrix::zeros(u.nrows(), order.len());
    let mut sv = DMatrix::zeros(v.nrows(), order.len());
    let mut sorted = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &v.column(src));
        sorted.push(values[src].max(0.0));
    }
    fix_signs(&mut su, Some(&mut sv));
    DenseSvd {
        u: su,
        singular_values: sorted,
        v: sv,
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order
/// (algebraically) and deterministic eigenvector signs.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let eig = to_faer(m).self_adjoint_eigen(Side::Lower).expect("eigendecomposition of a finite matrix");
    let (fv, fs) = (eig.U(), eig.S());
    let values: Vec<f64> = (0..n).map(|k| fs[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| fv[(r, c)]);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut sorted_vecs = DMatrix::zeros(vectors.nrows(), order.len());
    let mut sorted_vals = Vec::with_capacity(order.len());
    for (dst, &src) in order.iter().enumerate() {
        sorted_vecs.set_column(dst, &vectors.column(src));
        sorted_vals.push(values[src]);
    }
    fix_signs(&mut sorted_vecs, None);
    (sorted_vals, sorted_vecs)
}

/// Flips each column of `u` so that its largest-magnitude entry is positive,
/// mirroring the flip onto the matching column of `v`.
pub fn fix_signs(u: &mut DMatrix<f64>, mut v: Option<&mut DMatrix<f64>>) {
    for c in 0..u.ncols() {
        let mut best = 0usize;
        let mut best_abs = -1.0f64;
        for (r, x) in u.column(c).iter().enumerate() {
            // Ties resolve to the lowest index; the slack absorbs rounding noise
            // between mathematically equal entries.
            if x.abs() > best_abs * (1.0 + 1e-12) + 1e-300 {
                best_abs = x.abs();
                best = r;
            }
        }
        if u[(best, c)] < 0.0 {
            u.column_mut(c).neg_mut();
            if let Some(v) = v.as_deref_mut() {
                v.column_mut(c).neg_mut();
            }
        }
    }
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)])
}

/// Orthonormal basis for the column span of `m` (thin QR), `m.ncols()` columns.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let q = m.clone().qr().q();
    q.columns(0, m.ncols().min(m.nrows())).into_owned()
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// `max |U^T U - I|` for a matrix with supposedly orthonormal columns.
pub fn orthonormality_defect(u: &DMatrix<f64>) -> f64 {
    let gram = u.tr_mul(u);
    let n = gram.nrows();
    max_abs(&(gram - DMatrix::<f64>::identity(n, n)))
}

/// Sine of the largest principal angle between the column spans of two
/// orthonormal bases of equal dimension.
///
/// Computed as the spectral norm of `(I - A A^T) B`, which stays accurate for
/// tiny angles where `acos` of the cosines would not.
pub fn max_principal_angle_sine(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows());
    if a.ncols() != b.ncols() {
        return 1.0;
    }
    if b.ncols() == 0 {
        return 0.0;
    }
    let residual = b - a * a.tr_mul(b);
    dense_svd(&residual).singular_values.first().copied().unwrap_or(0.0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &DVector<f64>) -> f64 {
    v.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svd_is_sorted_and_sign_fixed() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -3.0, 0.0, 0.0, 0.0, 2.0]);
        let svd = dense_svd(&m);
        assert_eq!(svd.singular_values, vec![3.0, 2.0, 1.0]);
        for c in 0..3 {
            let col = svd.u.column(c);
            let (idx, _) = col.iamax_full();
            assert!(svd.u[(idx, 0)].abs() >= 0.0);
            assert!(col.iter().cloned().fold(f64::MIN, f64::max) > 0.0);
        }
        let rebuilt = &svd.u * DMatrix::from_diagonal(&DVector::from_vec(svd.singular_values.clone())) * svd.v.transpose();
        assert!(max_abs(&(rebuilt - m)) < 1e-12);
    }

    #[test]
    fn principal_angle_detects_equal_and_orthogonal_spans() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[-1.0, 0.0, 0.0]);
        let c = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 0.0]);
        assert!(max_principal_angle_sine(&a, &b) < 1e-15);
        assert!((max_principal_angle_sine(&a, &c) - 1.0).abs() < 1e-15);
    }
}
