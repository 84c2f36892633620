//! How far generated instances of a group sit inside the real instances of
//! the same group, measured by k-nearest-neighbor labels in feature space.

use std::cmp::Ordering;

use rayon::prelude::*;

use super::MetricsError;
use crate::features::{sq_dist, FeatureMatrix};

pub const DEFAULT_OVERLAP_K: usize = 10;

/// For each generated instance, the fraction of its `k` nearest real instances
/// (squared Euclidean, ties by instance id) labelled `group`; averaged.
///
/// `real_groups[i]` is the group label of row `i` of `real`.
pub fn neighborhood_overlap(
    real: &FeatureMatrix,
    real_groups: &[String],
    gen_group: &FeatureMatrix,
    group: &str,
    k: usize,
) -> Result<f64, MetricsError> {
    if real_groups.len() != real.rows() {
        return Err(MetricsError::Invalid(format!(
            "{} group labels for {} real rows",
            real_groups.len(),
            real.rows()
        )));
    }
    if real.dims() != gen_group.dims() {
        return Err(MetricsError::DimensionMismatch(format!(
            "real features have {} dims, generated have {}",
            real.dims(),
            gen_group.dims()
        )));
    }
    if k == 0 {
        return Err(MetricsError::Invalid("k must be at least 1".into()));
    }
    if k > real.rows() {
        return Err(MetricsError::InsufficientSamples(format!(
            "k = {k} exceeds the {} real instances",
            real.rows()
        )));
    }
    if gen_group.rows() == 0 {
        return Err(MetricsError::InsufficientSamples(format!(
            "no generated instances for group `{group}`"
        )));
    }
    let ids = real.instance_ids();
    let fractions: Vec<f64> = (0..gen_group.rows())
        .into_par_iter()
        .map(|g| {
            let q = gen_group.row(g);
            let mut cands: Vec<(f64, usize)> =
                (0..real.rows()).map(|r| (sq_dist(q, real.row(r)), r)).collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| ids[a.1].cmp(&ids[b.1]))
            };
            if k < cands.len() {
                cands.select_nth_unstable_by(k - 1, order);
            }
            let hits = cands[..k]
                .iter()
                .filter(|(_, r)| real_groups[*r] == group)
                .count();
            hits as f64 / k as f64
        })
        .collect();
    Ok(fractions.iter().sum::<f64>() / fractions.len() as f64)
}
