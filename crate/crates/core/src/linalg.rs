//! Small dense helpers built on symmetric eigendecompositions.
//!
//! nalgebra's SVD returns inconsistent factors on some rank-deficient inputs,
//! so singular vectors and pseudo-inverse solves go through the Gram matrix
//! instead.

use nalgebra::{DMatrix, DVector};

/// Eigenpairs of a symmetric matrix, largest eigenvalue first (ties keep the
/// lower original index first).
pub(crate) fn sorted_eigen(sym: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| {
        eig.eigenvalues[y]
            .total_cmp(&eig.eigenvalues[x])
            .then(x.cmp(&y))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i))
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Leading singular triple `(σ, u, v)` of `m`, or `None` for a zero matrix.
pub(crate) fn leading_singular(m: &DMatrix<f64>) -> Option<(f64, DVector<f64>, DVector<f64>)> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return None;
    }
    if m.nrows() <= m.ncols() {
        let (_, vecs) = sorted_eigen(m * m.transpose());
        let u = vecs.column(0).into_owned();
        let sv = m.tr_mul(&u);
        let sigma = sv.norm();
        (sigma > 0.0 && sigma.is_finite()).then(|| (sigma, u, sv / sigma))
    } else {
        let (_, vecs) = sorted_eigen(m.tr_mul(m));
        let v = vecs.column(0).into_owned();
        let su = m * &v;
        let sigma = su.norm();
        (sigma > 0.0 && sigma.is_finite()).then(|| (sigma, su / sigma, v))
    }
}

/// The `r` leading left singular vectors of `m` as columns.
pub(crate) fn leading_left_singular_vectors(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (_, vecs) = sorted_eigen(m * m.transpose());
    vecs.columns(0, r.min(vecs.ncols())).into_owned()
}

/// Minimum-norm solution of `gram · x = rhs` for a symmetric positive
/// semidefinite `gram`; tries Cholesky first.
pub(crate) fn solve_psd(gram: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = gram.clone().cholesky() {
        let x = ch.solve(rhs);
        if x.iter().all(|v| v.is_finite()) {
            return x;
        }
    }
    let (vals, vecs) = sorted_eigen(gram.clone());
    let cutoff = vals.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let proj = vecs.tr_mul(rhs);
    let mut scaled = proj;
    for (i, &lam) in vals.iter().enumerate() {
        let s = if lam > cutoff { 1.0 / lam } else { 0.0 };
        scaled.row_mut(i).scale_mut(s);
    }
    vecs * scaled
}

/// Minimum-norm least squares `argmin ‖a x − b‖`.
pub(crate) fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let gram = a.tr_mul(a);
    let rhs = DMatrix::from_column_slice(a.ncols(), 1, a.tr_mul(b).as_slice());
    solve_psd(&gram, &rhs).column(0).into_owned()
}
