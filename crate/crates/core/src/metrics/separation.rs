//! Silhouette-based separation of labelled points inside one band.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::MetricsError;
use crate::embedding::{BandLayout, Point2};

/// Silhouette coefficient of every point, Euclidean distance in 2D.
///
/// Points of singleton groups score 0, as do points where both the mean
/// intra-group distance and the nearest mean inter-group distance are 0.
pub fn silhouette_samples(points: &[Point2], labels: &[usize]) -> Vec<f64> {
    assert_eq!(points.len(), labels.len());
    let n_groups = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_groups];
    for &l in labels {
        sizes[l] += 1;
    }
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if sizes[own] <= 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_groups];
            for (j, q) in points.iter().enumerate() {
                if j != i {
                    let dx = points[i][0] - q[0];
                    let dy = points[i][1] - q[1];
                    sums[labels[j]] += (dx * dx + dy * dy).sqrt();
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..n_groups)
                .filter(|&g| g != own && sizes[g] > 0)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            if !b.is_finite() {
                return 0.0;
            }
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// Band points that carry a label, with labels mapped to dense indices in
/// lexicographic order.
fn labelled(
    band: &BandLayout,
    labels: &HashMap<String, String>,
) -> Result<(Vec<Point2>, Vec<usize>, Vec<String>), MetricsError> {
    let mut names: Vec<String> = band
        .points
        .iter()
        .filter_map(|p| labels.get(&p.instance_id).cloned())
        .collect();
    names.sort();
    names.dedup();
    if names.len() < 2 {
        return Err(MetricsError::SeparationUndefined(format!(
            "band {} has {} labelled group(s), need 2",
            band.index,
            names.len()
        )));
    }
    let index: HashMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut pts = Vec::new();
    let mut ls = Vec::new();
    for p in &band.points {
        if let Some(g) = labels.get(&p.instance_id) {
            pts.push([p.x, p.y]);
            ls.push(index[g.as_str()]);
        }
    }
    Ok((pts, ls, names))
}

/// Mean silhouette over all labelled points of the band. Points without a
/// label are ignored.
pub fn cluster_separation(
    band: &BandLayout,
    labels: &HashMap<String, String>,
) -> Result<f64, MetricsError> {
    let (pts, ls, _) = labelled(band, labels)?;
    let s = silhouette_samples(&pts, &ls);
    Ok((s.iter().sum::<f64>() / s.len() as f64).clamp(-1.0, 1.0))
}

/// Mean silhouette per group, computed with all groups present.
pub fn group_separation(
    band: &BandLayout,
    labels: &HashMap<String, String>,
) -> Result<BTreeMap<String, f64>, MetricsError> {
    let (pts, ls, names) = labelled(band, labels)?;
    let s = silhouette_samples(&pts, &ls);
    let mut sums = vec![(0.0, 0usize); names.len()];
    for (v, &l) in s.iter().zip(&ls) {
        sums[l].0 += v;
        sums[l].1 += 1;
    }
    Ok(names
        .into_iter()
        .zip(sums)
        .map(|(n, (s, c))| (n, (s / c as f64).clamp(-1.0, 1.0)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::BandPoint;

    fn band(points: &[(f64, f64)]) -> BandLayout {
        BandLayout {
            index: 0,
            training_iteration: 0,
            center: 0.0,
            width: 1.0,
            points: points
                .iter()
                .enumerate()
                .map(|(i, &(x, y))| BandPoint {
                    instance_id: format!("p{i}"),
                    x,
                    y,
                })
                .collect(),
        }
    }

    fn labels(groups: &[&str]) -> HashMap<String, String> {
        groups
            .iter()
            .enumerate()
            .map(|(i, g)| (format!("p{i}"), g.to_string()))
            .collect()
    }

    /// Textbook silhouette with explicit loops over label strings.
    fn oracle(points: &[(f64, f64)], groups: &[&str]) -> f64 {
        let dist = |i: usize, j: usize| {
            ((points[i].0 - points[j].0).powi(2) + (points[i].1 - points[j].1).powi(2)).sqrt()
        };
        let mut total = 0.0;
        for i in 0..points.len() {
            let same: Vec<usize> = (0..points.len())
                .filter(|&j| j != i && groups[j] == groups[i])
                .collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| dist(i, j)).sum::<f64>() / same.len() as f64;
            let mut others: Vec<&str> = groups.iter().copied().filter(|g| *g != groups[i]).collect();
            others.sort();
            others.dedup();
            let b = others
                .iter()
                .map(|g| {
                    let members: Vec<usize> =
                        (0..points.len()).filter(|&j| groups[j] == *g).collect();
                    members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            if a.max(b) > 0.0 {
                total += (b - a) / a.max(b);
            }
        }
        total / points.len() as f64
    }

    #[test]
    fn coincident_groups_score_zero() {
        let b = band(&[(0.0, 0.0); 6]);
        let l = labels(&["a", "a", "a", "b", "b", "b"]);
        assert_eq!(cluster_separation(&b, &l).unwrap(), 0.0);
    }

    #[test]
    fn tight_far_groups_score_high() {
        let pts = [(0.0, 0.0), (0.1, 0.05), (0.0, 0.1), (0.2, 100.0), (0.1, 100.1), (0.0, 99.9)];
        let groups = ["a", "a", "a", "b", "b", "b"];
        let s = cluster_separation(&band(&pts), &labels(&groups)).unwrap();
        assert!(s > 0.9);
        assert!((s - oracle(&pts, &groups)).abs() < 1e-12);
    }

    #[test]
    fn shuffled_labels_score_lower() {
        let pts = [(0.0, 0.0), (0.1, 0.5), (0.0, 1.0), (0.2, 5.0), (0.1, 5.5), (0.0, 6.0)];
        let truth = ["a", "a", "a", "b", "b", "b"];
        let shuffled = ["b", "a", "b", "a", "b", "a"];
        let s_true = cluster_separation(&band(&pts), &labels(&truth)).unwrap();
        let s_shuf = cluster_separation(&band(&pts), &labels(&shuffled)).unwrap();
        assert!(s_shuf < s_true);
        assert!((s_shuf - oracle(&pts, &shuffled)).abs() < 1e-12);
    }

    #[test]
    fn single_group_is_undefined() {
        let b = band(&[(0.0, 0.0), (0.0, 1.0)]);
        assert!(matches!(
            cluster_separation(&b, &labels(&["a", "a"])),
            Err(MetricsError::SeparationUndefined(_))
        ));
    }

    #[test]
    fn singleton_group_points_score_zero() {
        let pts = [(0.0, 0.0), (0.0, 0.2), (0.0, 9.0)];
        let s = silhouette_samples(&pts.map(|(x, y)| [x, y]), &[0, 0, 1]);
        assert_eq!(s[2], 0.0);
        let per = group_separation(&band(&pts), &labels(&["a", "a", "b"])).unwrap();
        assert_eq!(per["b"], 0.0);
        assert!(per["a"] > 0.9);
    }
}
