//! Small dense linear-algebra helpers shared by the fitting and reduction code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Column means of an `n x p` data matrix.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// Maximum-likelihood (divide by `n`) covariance of `x` about `center`.
pub fn mle_covariance(x: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let centered = center_rows(x, center);
    let mut cov = centered.tr_mul(&centered) / x.nrows() as f64;
    symmetrize(&mut cov);
    cov
}

/// `x` with `center` subtracted from every row.
pub fn center_rows(x: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-center[j]);
    }
    out
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let p = m.nrows();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let mut s = m.clone();
    symmetrize(&mut s);
    Cholesky::new(s).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, what)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Ratio of largest to smallest eigenvalue; infinite when not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen_desc(m);
    let hi = vals[0];
    let lo = vals[vals.len() - 1];
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn log_det_spd(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals.as_slice(), &[5.0, 3.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mle_covariance_divides_by_n() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, 3.0]);
        let c = mle_covariance(&x, &column_means(&x));
        assert!((c[(0, 0)] - 1.0).abs() < 1e-15);
    }
}
