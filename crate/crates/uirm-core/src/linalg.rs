//! Symmetric-eigenproblem helpers shared by the linear modules.
//!
//! Thin wrappers over nalgebra's symmetric eigendecomposition that pin down
//! ordering and sign conventions so fitted models are reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted in
/// decreasing order and a fixed per-column sign convention: the component of
/// largest absolute value in each eigenvector is made positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "sym_eigen_desc requires a square matrix");
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sym.eigenvalues[b]
            .partial_cmp(&sym.eigenvalues[a])
            .expect("non-finite eigenvalue")
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(sym.eigenvalues[src]);
        vectors.set_column(dst, &sym.eigenvectors.column(src));
    }
    fix_column_signs(&mut vectors);
    (values, vectors)
}

/// Flips each column so its largest-magnitude component is positive.
/// Ties keep the earliest such component.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = 0.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Spectral norm of a symmetric matrix (largest |eigenvalue|).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let sym = nalgebra::SymmetricEigen::new(m.clone());
    sym.eigenvalues.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// (A + Aᵀ) / 2.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks symmetry within a relative Frobenius tolerance.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let asym = m - m.transpose();
    let scale = frobenius_norm(m).max(1.0);
    frobenius_norm(&asym) <= rel_tol * scale
}

/// Checks positive semi-definiteness of a symmetric matrix within an
/// eigenvalue tolerance relative to the largest-magnitude eigenvalue.
pub fn is_psd(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    let (values, _) = sym_eigen_desc(m);
    let scale = values.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    values.iter().all(|&v| v >= -rel_tol * scale)
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal bases of equal rank.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "principal angles need equal shapes, got {}x{} vs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if a.ncols() == 0 {
        return Ok(0.0);
    }
    // Singular values of AᵀB are the cosines of the principal angles.
    let svd = (a.transpose() * b).svd(false, false);
    let min_sigma = svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |acc, s| acc.min(*s))
        .clamp(-1.0, 1.0);
    Ok(min_sigma.acos())
}

/// Mean of a batch given as rows of `m`.
pub fn row_mean(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows() as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n)
}
