//! The cross-band alignment penalty `(lambda / |M|) * sum_{i in M} (y_i^t - y_i^{t-1})^2`.

use std::collections::HashMap;

use super::{BandLayout, Point2};

/// Index pairs `(current, previous)` of instances present in both bands,
/// in current-band order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
}

impl Matching {
    /// Matches by exact `instance_id` equality.
    pub fn by_id<S: AsRef<str>>(current: &[S], previous: &[S]) -> Self {
        let prev: HashMap<&str, usize> = previous
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_ref(), i))
            .collect();
        let pairs = current
            .iter()
            .enumerate()
            .filter_map(|(i, s)| prev.get(s.as_ref()).map(|&j| (i, j)))
            .collect();
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Per-pair weight `lambda / |M|`, or 0 when nothing matched.
    pub fn weight(&self, lambda: f64) -> f64 {
        if self.pairs.is_empty() {
            0.0
        } else {
            lambda / self.pairs.len() as f64
        }
    }
}

pub(crate) fn penalty_indexed(
    current: &[Point2],
    previous: &[Point2],
    matching: &Matching,
    lambda: f64,
) -> f64 {
    let w = matching.weight(lambda);
    matching
        .pairs
        .iter()
        .map(|&(i, j)| {
            let d = current[i][1] - previous[j][1];
            w * d * d
        })
        .sum()
}

pub(crate) fn gradient_indexed(
    current: &[Point2],
    previous: &[Point2],
    matching: &Matching,
    lambda: f64,
) -> Vec<Point2> {
    let mut out = vec![[0.0; 2]; current.len()];
    let w = matching.weight(lambda);
    for &(i, j) in &matching.pairs {
        out[i][1] = 2.0 * w * (current[i][1] - previous[j][1]);
    }
    out
}

/// Penalty value between `current` and its predecessor band.
pub fn alignment_penalty(current: &BandLayout, previous: &BandLayout, lambda: f64) -> f64 {
    let m = Matching::by_id(&current.instance_ids(), &previous.instance_ids());
    penalty_indexed(&current.positions(), &previous.positions(), &m, lambda)
}

/// Gradient of the penalty with respect to the current band's points.
/// Unmatched instances and every x component get 0.
pub fn alignment_gradient(current: &BandLayout, previous: &BandLayout, lambda: f64) -> Vec<Point2> {
    let m = Matching::by_id(&current.instance_ids(), &previous.instance_ids());
    if m.is_empty() {
        log::warn!(
            "alignment coverage: band {} shares no instances with band {}",
            current.index,
            previous.index
        );
    }
    gradient_indexed(&current.positions(), &previous.positions(), &m, lambda)
}
