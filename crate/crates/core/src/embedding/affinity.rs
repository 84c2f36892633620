//! High-dimensional input similarities: distances, perplexity-calibrated
//! conditional affinities, and the symmetric joint distribution P.

use rayon::prelude::*;

use super::EmbedError;
use crate::features::{sq_dist, FeatureMatrix};

/// Dense row-major n×n matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, EmbedError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(EmbedError::Input("matrix rows must all have length n".into()));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Squared Euclidean distances between all rows of `x`.
pub fn pairwise_sq_dists(x: &FeatureMatrix) -> Result<SquareMatrix, EmbedError> {
    let n = x.rows();
    if n < 2 {
        return Err(EmbedError::Input(format!(
            "need at least 2 rows to compute distances, got {n}"
        )));
    }
    let mut out = SquareMatrix::zeros(n);
    // Upper triangle in parallel, then mirror so d[i][j] and d[j][i] are the same bits.
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, row)| {
            let a = x.row(i);
            for (j, cell) in row.iter_mut().enumerate().skip(i + 1) {
                *cell = sq_dist(a, x.row(j));
            }
        });
    for i in 0..n {
        for j in 0..i {
            out.data[i * n + j] = out.data[j * n + i];
        }
    }
    Ok(out)
}

/// Row-stochastic `p_{j|i}` and the bandwidths that produced them.
#[derive(Debug, Clone)]
pub struct ConditionalAffinities {
    pub p: SquareMatrix,
    pub sigmas: Vec<f64>,
}

/// Joint t-SNE affinities: symmetric, zero diagonal, unit total mass.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub p: SquareMatrix,
    pub sigmas: Vec<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.p.n()
    }

    /// Wraps an arbitrary joint distribution, e.g. for tests of the cost. The
    /// matrix must be symmetric, nonnegative, zero on the diagonal and sum to one.
    pub fn from_joint(p: SquareMatrix) -> Result<Self, EmbedError> {
        let n = p.n();
        for i in 0..n {
            if p.get(i, i) != 0.0 {
                return Err(EmbedError::Input(format!("p[{i}][{i}] must be 0")));
            }
            for j in 0..n {
                let v = p.get(i, j);
                if !(v >= 0.0) || v != p.get(j, i) {
                    return Err(EmbedError::Input(format!(
                        "p must be symmetric and nonnegative (entry {i},{j})"
                    )));
                }
            }
        }
        if (p.sum() - 1.0).abs() > 1e-9 {
            return Err(EmbedError::Input(format!("p sums to {}, not 1", p.sum())));
        }
        Ok(Self {
            p,
            sigmas: vec![f64::NAN; n],
        })
    }
}

const LOG_SIGMA_LO: f64 = -23.025850929940457; // ln(1e-10)
const LOG_SIGMA_HI: f64 = 23.025850929940457; // ln(1e10)
const MAX_BISECTION_STEPS: usize = 64;
const ENTROPY_TOL_BITS: f64 = 1e-10;

/// Calibrates one Gaussian bandwidth per row so that `2^H(P_i)` equals
/// `perplexity`, by bisection on `ln sigma` over `[1e-10, 1e10]`.
///
/// A row whose off-diagonal distances are all equal is uniform for every sigma;
/// it is returned as such and its sigma is reported as 1.
pub fn conditional_affinities(
    dists: &SquareMatrix,
    perplexity: f64,
) -> Result<ConditionalAffinities, EmbedError> {
    let n = dists.n();
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(EmbedError::Config(format!(
            "perplexity must lie in (1, N) = (1, {n}), got {perplexity}"
        )));
    }
    let target = perplexity.log2();
    let mut p = SquareMatrix::zeros(n);
    let mut sigmas = vec![0.0; n];
    p.data
        .par_chunks_mut(n)
        .zip(sigmas.par_iter_mut())
        .enumerate()
        .for_each(|(i, (row, sigma))| {
            *sigma = calibrate_row(dists.row(i), i, target, row);
        });
    Ok(ConditionalAffinities { p, sigmas })
}

fn calibrate_row(d: &[f64], i: usize, target_bits: f64, out: &mut [f64]) -> f64 {
    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for (j, &v) in d.iter().enumerate() {
        if j != i {
            dmin = dmin.min(v);
            dmax = dmax.max(v);
        }
    }
    if dmin == dmax {
        let u = 1.0 / (d.len() - 1) as f64;
        for (j, o) in out.iter_mut().enumerate() {
            *o = if j == i { 0.0 } else { u };
        }
        return 1.0;
    }
    let (mut lo, mut hi) = (LOG_SIGMA_LO, LOG_SIGMA_HI);
    let mut log_sigma = 0.0;
    for _ in 0..MAX_BISECTION_STEPS {
        log_sigma = 0.5 * (lo + hi);
        let h = row_entropy_bits(d, i, dmin, log_sigma, out);
        let diff = h - target_bits;
        if diff.abs() < ENTROPY_TOL_BITS {
            break;
        }
        // Entropy grows with sigma.
        if diff > 0.0 {
            hi = log_sigma;
        } else {
            lo = log_sigma;
        }
    }
    log_sigma.exp()
}

/// Fills `out` with the normalized Gaussian row and returns its entropy in bits.
fn row_entropy_bits(d: &[f64], i: usize, dmin: f64, log_sigma: f64, out: &mut [f64]) -> f64 {
    let beta = 0.5 * (-2.0 * log_sigma).exp();
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == i {
            0.0
        } else {
            (-(d[j] - dmin) * beta).exp()
        };
        sum += *o;
    }
    let mut h = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            h -= *o * o.log2();
        }
    }
    h
}

/// `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn symmetrize(cond: &ConditionalAffinities) -> Result<AffinityMatrix, EmbedError> {
    let n = cond.p.n();
    for i in 0..n {
        let row = cond.p.row(i);
        if row.iter().any(|v| !(*v >= 0.0)) {
            return Err(EmbedError::Input(format!(
                "conditional row {i} has a negative or NaN entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(EmbedError::Input(format!(
                "conditional row {i} sums to {s}, expected 1"
            )));
        }
    }
    let scale = 1.0 / (2.0 * n as f64);
    let mut p = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            p.data[i * n + j] = if i == j {
                0.0
            } else {
                (cond.p.get(i, j) + cond.p.get(j, i)) * scale
            };
        }
    }
    Ok(AffinityMatrix {
        p,
        sigmas: cond.sigmas.clone(),
    })
}

/// Distances, calibration and symmetrization in one call.
pub fn affinities(x: &FeatureMatrix, perplexity: f64) -> Result<AffinityMatrix, EmbedError> {
    let d = pairwise_sq_dists(x)?;
    symmetrize(&conditional_affinities(&d, perplexity)?)
}
