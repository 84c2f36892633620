use nalgebra::{DMatrix, DVector};

use super::MetricsError;
use crate::features::FeatureMatrix;

/// Sample mean and unbiased (divisor N - 1) covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub samples: usize,
}

impl GaussianMoments {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Two-pass mean/covariance in `f64`. The covariance is exactly symmetric.
pub fn gaussian_moments(x: &FeatureMatrix) -> Result<GaussianMoments, MetricsError> {
    let (n, d) = (x.rows(), x.dims());
    if n < 2 {
        return Err(MetricsError::InsufficientSamples(format!(
            "`{}` has {n} rows, need at least 2",
            x.source_name()
        )));
    }
    let mut mean = DVector::zeros(d);
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.row(i)) {
            *m += f64::from(v);
        }
    }
    mean /= n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| f64::from(x.row(i)[j]) - mean[j]);
    let mut cov = xc.transpose() * &xc;
    cov /= (n - 1) as f64;
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok(GaussianMoments {
        mean,
        cov,
        samples: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, rng_for};

    #[test]
    fn two_point_variance() {
        let x = FeatureMatrix::from_rows("t", &[vec![0.0, 0.0], vec![2.0, 0.0]], "r").unwrap();
        let m = gaussian_moments(&x).unwrap();
        assert_eq!(m.mean.as_slice(), &[1.0, 0.0]);
        assert_eq!(m.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn constant_rows_have_zero_covariance() {
        let x = FeatureMatrix::from_rows("t", &vec![vec![3.0, -1.0, 7.0]; 5], "r").unwrap();
        let m = gaussian_moments(&x).unwrap();
        assert!(m.cov.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_row_is_insufficient() {
        let x = FeatureMatrix::from_rows("t", &[vec![1.0]], "r").unwrap();
        assert!(matches!(
            gaussian_moments(&x),
            Err(MetricsError::InsufficientSamples(_))
        ));
    }

    #[test]
    fn matches_two_pass_oracle() {
        let mut rng = rng_for(21, 0);
        let rows: Vec<Vec<f32>> = (0..100)
            .map(|_| (0..5).map(|_| (3.0 * normal(&mut rng) + 1.0) as f32).collect())
            .collect();
        let x = FeatureMatrix::from_rows("t", &rows, "r").unwrap();
        let m = gaussian_moments(&x).unwrap();
        // Plain nested loops, no matrix library.
        let n = rows.len() as f64;
        let mu: Vec<f64> = (0..5)
            .map(|j| rows.iter().map(|r| r[j] as f64).sum::<f64>() / n)
            .collect();
        for a in 0..5 {
            assert!((m.mean[a] - mu[a]).abs() < 1e-9);
            for b in 0..5 {
                let c: f64 = rows
                    .iter()
                    .map(|r| (r[a] as f64 - mu[a]) * (r[b] as f64 - mu[b]))
                    .sum::<f64>()
                    / (n - 1.0);
                assert!((m.cov[(a, b)] - c).abs() < 1e-9);
                assert_eq!(m.cov[(a, b)], m.cov[(b, a)]);
            }
        }
    }
}
