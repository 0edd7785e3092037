//! Dense eigen/SVD helpers. ndarray holds the data; nalgebra does the
//! factorizations.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn to_na(m: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}


/// Eigenpairs of a symmetric matrix, eigenvalues descending; eigenvectors
/// are the columns of the returned matrix.
pub fn symmetric_eigen(m: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape("symmetric_eigen", "matrix is not square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry passed to eigensolver".into()));
    }
    let eig = nalgebra::SymmetricEigen::try_new(to_na(m), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = Array2::from_shape_fn(m.raw_dim(), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Singular values, descending.
pub fn singular_values(m: &Array2<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry passed to SVD".into()));
    }
    let svd = nalgebra::SVD::try_new(to_na(m), false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Spectral (ℓ² operator) norm.
pub fn op_norm(m: &Array2<f64>) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

pub fn identity(n: usize) -> Array2<f64> {
    Array2::eye(n)
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
