//! Dense ridge-regression kernels on top of faer.

use faer::prelude::*;
use faer::{Mat, MatRef, Side};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (ridge lambda too small?)")]
    NotPositiveDefinite,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Build an `n x d` matrix from equal-length rows.
pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Mat<f64> {
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    Mat::from_fn(rows.len(), d, |i, j| rows[i].as_ref()[j])
}

/// Rows of `x` selected by `index`, in order.
pub fn select_rows(x: MatRef<'_, f64>, index: &[usize]) -> Mat<f64> {
    Mat::from_fn(index.len(), x.ncols(), |i, j| x.read(index[i], j))
}

/// Append a constant-one column.
pub fn with_bias(x: MatRef<'_, f64>) -> Mat<f64> {
    let d = x.ncols();
    Mat::from_fn(x.nrows(), d + 1, |i, j| if j == d { 1.0 } else { x.read(i, j) })
}

/// `0/1` indicator targets, `n x classes`.
pub fn one_hot(labels: &[usize], classes: usize) -> Mat<f64> {
    Mat::from_fn(labels.len(), classes, |i, j| (labels[i] == j) as u8 as f64)
}

/// `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Result<Mat<f64>, LinalgError> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(LinalgError::Shape(format!(
            "{}x{} system with {} rhs rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let chol = a
        .cholesky(Side::Lower)
        .map_err(|_| LinalgError::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

fn add_ridge(a: &mut Mat<f64>, lambda: f64) {
    for k in 0..a.nrows() {
        a.write(k, k, a.read(k, k) + lambda);
    }
}

/// `argmin |X W - Y|^2 + lambda |W|^2` through the `d x d` normal equations.
pub fn ridge_primal(
    x: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    lambda: f64,
) -> Result<Mat<f64>, LinalgError> {
    if x.nrows() != y.nrows() {
        return Err(LinalgError::Shape("X and Y row counts differ".into()));
    }
    let mut g = x.transpose() * x;
    add_ridge(&mut g, lambda);
    let rhs = x.transpose() * y;
    spd_solve(g.as_ref(), rhs.as_ref())
}

/// The same solution through the `n x n` kernel `K = X X^T`:
/// `W = X^T (K + lambda I)^-1 Y`.
pub fn ridge_dual(
    x: MatRef<'_, f64>,
    kernel: MatRef<'_, f64>,
    y: MatRef<'_, f64>,
    lambda: f64,
) -> Result<Mat<f64>, LinalgError> {
    if kernel.nrows() != x.nrows() || x.nrows() != y.nrows() {
        return Err(LinalgError::Shape("kernel, X and Y row counts differ".into()));
    }
    let mut k = kernel.to_owned();
    add_ridge(&mut k, lambda);
    let alpha = spd_solve(k.as_ref(), y)?;
    Ok(x.transpose() * &alpha)
}

/// Ridge solution using whichever system is smaller.
pub fn ridge(x: MatRef<'_, f64>, y: MatRef<'_, f64>, lambda: f64) -> Result<Mat<f64>, LinalgError> {
    if x.nrows() < x.ncols() {
        let k = x * x.transpose();
        ridge_dual(x, k.as_ref(), y, lambda)
    } else {
        ridge_primal(x, y, lambda)
    }
}

/// Submatrix `K[index, index]`.
pub fn select_square(k: MatRef<'_, f64>, index: &[usize]) -> Mat<f64> {
    Mat::from_fn(index.len(), index.len(), |i, j| k.read(index[i], index[j]))
}

/// Mean of the diagonal; the natural scale for a ridge penalty.
pub fn mean_diag(k: MatRef<'_, f64>) -> f64 {
    let n = k.nrows().min(k.ncols());
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| k.read(i, i)).sum::<f64>() / n as f64
}
