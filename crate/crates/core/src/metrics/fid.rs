//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::DMatrix;

use super::linalg::{eigh, sqrt_from_eigen, symmetric_part};
use super::moments::{gaussian_moments, GaussianMoments};
use super::MetricsError;
use crate::features::FeatureMatrix;

/// Relative size of the ridge added to a near-singular covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FidReport {
    pub value: f64,
    /// Ridge added to the real covariance (0 when it was well conditioned).
    pub epsilon_real: f64,
    /// Ridge added to the generated covariance (0 when it was well conditioned).
    pub epsilon_gen: f64,
}

impl FidReport {
    pub fn regularized(&self) -> bool {
        self.epsilon_real > 0.0 || self.epsilon_gen > 0.0
    }
}

pub fn fid(real: &FeatureMatrix, gen: &FeatureMatrix) -> Result<f64, MetricsError> {
    fid_detailed(real, gen).map(|r| r.value)
}

pub fn fid_detailed(real: &FeatureMatrix, gen: &FeatureMatrix) -> Result<FidReport, MetricsError> {
    if real.dims() != gen.dims() {
        return Err(MetricsError::DimensionMismatch(format!(
            "real features have {} dims, generated have {}",
            real.dims(),
            gen.dims()
        )));
    }
    fid_from_moments(&gaussian_moments(real)?, &gaussian_moments(gen)?)
}

/// Eigendecomposition of a covariance, with `eps * I` added when its smallest
/// eigenvalue falls below `eps = 1e-6 * mean(diagonal)`.
struct Conditioned {
    cov: DMatrix<f64>,
    eigenvalues: nalgebra::DVector<f64>,
    eigenvectors: DMatrix<f64>,
    epsilon: f64,
}

fn condition(cov: &DMatrix<f64>) -> Result<Conditioned, MetricsError> {
    let cov = symmetric_part(cov);
    let d = cov.nrows();
    let eps = COVARIANCE_RIDGE * cov.trace() / d as f64;
    let eig = eigh(&cov)?;
    let min = eig.eigenvalues.min();
    if eps > 0.0 && min < eps {
        Ok(Conditioned {
            cov: &cov + DMatrix::identity(d, d) * eps,
            eigenvalues: eig.eigenvalues.add_scalar(eps),
            eigenvectors: eig.eigenvectors,
            epsilon: eps,
        })
    } else {
        Ok(Conditioned {
            cov,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            epsilon: 0.0,
        })
    }
}

/// `|mu_r - mu_g|^2 + Tr(S_r + S_g - 2 (S_r^1/2 S_g S_r^1/2)^1/2)`.
///
/// Small negative results (within `1e-6 * (1 + Tr S_r + Tr S_g)`) are clamped to 0.
pub fn fid_from_moments(
    real: &GaussianMoments,
    gen: &GaussianMoments,
) -> Result<FidReport, MetricsError> {
    if real.dims() != gen.dims() {
        return Err(MetricsError::DimensionMismatch(format!(
            "real moments have {} dims, generated have {}",
            real.dims(),
            gen.dims()
        )));
    }
    let r = condition(&real.cov)?;
    let g = condition(&gen.cov)?;
    // Tr((S_r^1/2 S_g S_r^1/2)^1/2) is the sum of singular values of
    // S_g^1/2 S_r^1/2; this avoids square roots of tiny, noisy eigenvalues.
    let root_r = sqrt_from_eigen(&r.eigenvalues, &r.eigenvectors);
    let root_g = sqrt_from_eigen(&g.eigenvalues, &g.eigenvectors);
    let d = root_r.nrows();
    let trace_root: f64 = (&root_g * &root_r)
        .try_svd(false, false, f64::EPSILON, 0)
        .ok_or_else(|| MetricsError::Numerical(format!("SVD of {d}x{d} covariance root product failed")))?
        .singular_values
        .sum();

    let mean_term = (&real.mean - &gen.mean).norm_squared();
    let traces = r.cov.trace() + g.cov.trace();
    let mut value = mean_term + traces - 2.0 * trace_root;
    if value < 0.0 {
        let tol = 1e-6 * (1.0 + traces);
        if value < -tol {
            return Err(MetricsError::Numerical(format!(
                "FID evaluated to {value:.3e}, below tolerance {tol:.3e}"
            )));
        }
        value = 0.0;
    }
    Ok(FidReport {
        value,
        epsilon_real: r.epsilon,
        epsilon_gen: g.epsilon,
    })
}
