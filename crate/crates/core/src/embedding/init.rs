//! Starting positions: principal components for the first band, the
//! predecessor band (plus jitter) for every later one.

use std::cmp::Ordering;

use nalgebra::{DMatrix, SymmetricEigen};

use super::align::Matching;
use super::{EmbedError, EmbeddingConfig, Point2};
use crate::features::{sq_dist, FeatureMatrix};
use crate::rng::{normal, DetRng};

const APPEND_JITTER: f64 = 1e-3;
const UNMATCHED_NEIGHBORS: usize = 5;

/// Scores of the first two principal components.
///
/// Each score vector's sign is fixed so that its largest-magnitude entry is
/// positive (earliest row on ties, up to a relative 1e-9). A missing or numerically zero second
/// component yields an all-zero second vector.
pub fn principal_components(x: &FeatureMatrix) -> Result<[Vec<f64>; 2], EmbedError> {
    let (n, d) = (x.rows(), x.dims());
    if n < 2 {
        return Err(EmbedError::Input("need at least 2 rows for PCA".into()));
    }
    let mut means = vec![0.0f64; d];
    for i in 0..n {
        for (m, &v) in means.iter_mut().zip(x.row(i)) {
            *m += f64::from(v);
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);
    let xc = DMatrix::from_fn(n, d, |i, j| f64::from(x.row(i)[j]) - means[j]);
    let total: f64 = xc.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(EmbedError::Degenerate(format!(
            "all {n} points of `{}` are identical",
            x.source_name()
        )));
    }

    let (small, via_gram) = if d <= n {
        (xc.transpose() * &xc, false)
    } else {
        (&xc * xc.transpose(), true)
    };
    let dim = small.nrows();
    let eig = SymmetricEigen::try_new(small, f64::EPSILON, 0).ok_or_else(|| {
        EmbedError::Numerical(format!("eigendecomposition of {dim}x{dim} scatter matrix failed"))
    })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]];

    let component = |rank: usize| -> Vec<f64> {
        let Some(&idx) = order.get(rank) else {
            return vec![0.0; n];
        };
        let lambda = eig.eigenvalues[idx];
        if !(lambda > 1e-12 * top) {
            return vec![0.0; n];
        }
        let v = eig.eigenvectors.column(idx);
        let mut scores: Vec<f64> = if via_gram {
            v.iter().map(|u| u * lambda.sqrt()).collect()
        } else {
            (&xc * v).iter().copied().collect()
        };
        let pivot = sign_pivot(&scores);
        if scores[pivot] < 0.0 {
            scores.iter_mut().for_each(|s| *s = -*s);
        }
        scores
    };
    Ok([component(0), component(1)])
}

/// Row whose score decides the sign: the largest magnitude, where magnitudes
/// within a relative 1e-9 of the maximum count as tied and the earliest wins.
fn sign_pivot(scores: &[f64]) -> usize {
    let max = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    scores
        .iter()
        .position(|s| s.abs() >= max * (1.0 - 1e-9))
        .unwrap_or(0)
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt()
}

/// y = PC1 at unit standard deviation; x = band center + PC2 at standard
/// deviation W/8, clamped into band 0.
pub(crate) fn first_band_positions(
    x: &FeatureMatrix,
    config: &EmbeddingConfig,
    band: usize,
) -> Result<Vec<Point2>, EmbedError> {
    let [pc1, pc2] = principal_components(x)?;
    let s1 = population_std(&pc1);
    let s2 = population_std(&pc2);
    let center = config.band_center(band);
    let (lo, hi) = config.band_bounds(band);
    let x_scale = if s2 > 0.0 { config.band_width / 8.0 / s2 } else { 0.0 };
    Ok(pc1
        .iter()
        .zip(&pc2)
        .map(|(a, b)| [(center + b * x_scale).clamp(lo, hi), a / s1])
        .collect())
}

/// Warm start of band `k` from band `k - 1`.
///
/// Matched instances keep their offset from the band center and their height,
/// plus N(0, 1e-3) jitter on both coordinates. Unmatched instances start at
/// the band center, at the mean previous height of their 5 nearest matched
/// instances in feature space (ties by instance id), or at 0 if nothing matched.
pub(crate) fn warm_start(
    x: &FeatureMatrix,
    previous: &[Point2],
    matching: &Matching,
    band: usize,
    config: &EmbeddingConfig,
    rng: &mut DetRng,
) -> Vec<Point2> {
    let n = x.rows();
    let center = config.band_center(band);
    let prev_center = config.band_center(band - 1);
    let (lo, hi) = config.band_bounds(band);

    let mut prev_of: Vec<Option<usize>> = vec![None; n];
    for &(i, j) in &matching.pairs {
        prev_of[i] = Some(j);
    }

    let mut out = vec![[center, 0.0]; n];
    for i in 0..n {
        if let Some(j) = prev_of[i] {
            let jx = APPEND_JITTER * normal(rng);
            let jy = APPEND_JITTER * normal(rng);
            let px = center + (previous[j][0] - prev_center) + jx;
            out[i] = [px.clamp(lo, hi), previous[j][1] + jy];
        }
    }
    if matching.is_empty() {
        return out;
    }
    let ids = x.instance_ids();
    for i in 0..n {
        if prev_of[i].is_some() {
            continue;
        }
        let mut cands: Vec<(f64, usize)> = matching
            .pairs
            .iter()
            .map(|&(m, _)| (sq_dist(x.row(i), x.row(m)), m))
            .collect();
        cands.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ids[a.1].cmp(&ids[b.1]))
        });
        let take = cands.len().min(UNMATCHED_NEIGHBORS);
        let mean_y = cands[..take]
            .iter()
            .map(|&(_, m)| previous[prev_of[m].expect("matched")][1])
            .sum::<f64>()
            / take as f64;
        out[i] = [center, mean_y];
    }
    out
}
