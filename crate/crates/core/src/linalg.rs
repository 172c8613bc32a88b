//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn vector(values: &[f64]) -> Vector {
    DVector::from_column_slice(values)
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Largest absolute entry difference between `m` and its transpose.
pub fn asymmetry(m: &Matrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Spectral norm.
pub fn norm2(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Symmetric positive semidefinite square root; slightly negative
/// eigenvalues from rounding are clamped to zero.
pub fn sym_sqrt(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    v * Matrix::from_diagonal(&d) * v.transpose()
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let sym = symmetrize(m);
    match sym.clone().cholesky() {
        Some(ch) => Ok(symmetrize(&ch.inverse())),
        None => sym
            .try_inverse()
            .map(|inv| symmetrize(&inv))
            .ok_or_else(|| Error::Consistency("matrix is singular".into())),
    }
}

pub fn quad_form(m: &Matrix, v: &Vector) -> f64 {
    v.dot(&(m * v))
}

/// Numerical rank with a relative singular-value threshold.
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}
