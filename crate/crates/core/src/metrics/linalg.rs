use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricsError;

pub(crate) fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub(crate) fn eigh(a: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, MetricsError> {
    if !a.is_square() {
        return Err(MetricsError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::Numerical(format!(
            "{}x{} matrix has non-finite entries",
            a.nrows(),
            a.ncols()
        )));
    }
    SymmetricEigen::try_new(a.clone(), f64::EPSILON, 0).ok_or_else(|| {
        let diag = a.diagonal();
        MetricsError::Numerical(format!(
            "symmetric eigendecomposition did not converge: {}x{} matrix, frobenius norm {:.6e}, diagonal range [{:.6e}, {:.6e}]",
            a.nrows(),
            a.ncols(),
            a.norm(),
            diag.min(),
            diag.max()
        ))
    })
}

/// `V diag(sqrt(max(lambda, 0))) V^T`, symmetrized.
pub(crate) fn sqrt_from_eigen(eigenvalues: &DVector<f64>, eigenvectors: &DMatrix<f64>) -> DMatrix<f64> {
    let roots = eigenvalues.map(|l| l.max(0.0).sqrt());
    let scaled = eigenvectors * DMatrix::from_diagonal(&roots);
    symmetric_part(&(scaled * eigenvectors.transpose()))
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// The input is symmetrized as `(A + A^T) / 2` first; negative eigenvalues
/// are clamped to zero.
pub fn matrix_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricsError> {
    let sym = symmetric_part(a);
    let eig = eigh(&sym)?;
    Ok(sqrt_from_eigen(&eig.eigenvalues, &eig.eigenvectors))
}
