//! Per-snapshot, per-group metric table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fid_detailed, group_separation, neighborhood_overlap, MetricsError, DEFAULT_OVERLAP_K};
use crate::embedding::{BandLayout, EvolutionLayout};
use crate::ingest::{Origin, RunManifest, Snapshot};

pub const FLAG_FID_FEW_REAL: &str = "fid_insufficient_real";
pub const FLAG_FID_FEW_GENERATED: &str = "fid_insufficient_generated";
pub const FLAG_FID_REGULARIZED: &str = "fid_regularized";
pub const FLAG_NO_GENERATED: &str = "no_generated";
pub const FLAG_OVERLAP_FEW_REAL: &str = "overlap_insufficient_real";
pub const FLAG_NO_LAYOUT: &str = "no_layout";
pub const FLAG_SEPARATION_UNDEFINED: &str = "separation_undefined";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricOptions {
    /// Feature source used for FID and overlap.
    pub source: String,
    /// Label column defining groups. `None` puts every instance in one group
    /// named after the source.
    pub group_column: Option<String>,
    pub k: usize,
}

impl MetricOptions {
    pub fn for_manifest(manifest: &RunManifest) -> Self {
        Self {
            source: manifest.metric_source().to_string(),
            group_column: manifest.group_column().map(str::to_string),
            k: DEFAULT_OVERLAP_K,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct GroupMetrics {
    pub real_count: usize,
    pub generated_count: usize,
    pub fid: Option<f64>,
    /// Largest covariance ridge used for `fid`; 0 when none was needed.
    pub fid_epsilon: Option<f64>,
    pub overlap: Option<f64>,
    pub separation: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub snapshot_index: usize,
    pub training_iteration: u64,
    pub groups: BTreeMap<String, GroupMetrics>,
    /// Scalar metrics copied from the snapshot.
    pub losses: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricSeries {
    pub entries: Vec<MetricEntry>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends an entry; its snapshot index must exceed the last one.
    pub fn push(&mut self, entry: MetricEntry) -> Result<(), MetricsError> {
        if let Some(last) = self.entries.last() {
            if entry.snapshot_index <= last.snapshot_index {
                return Err(MetricsError::Invalid(format!(
                    "snapshot index {} does not follow {}",
                    entry.snapshot_index, last.snapshot_index
                )));
            }
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec(self).expect("series serializes");
        b.push(b'\n');
        b
    }

    /// One row per snapshot and group; missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("snapshot_index,training_iteration,group,fid,overlap,separation\n");
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for e in &self.entries {
            for (g, m) in &e.groups {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    e.snapshot_index,
                    e.training_iteration,
                    g,
                    cell(m.fid),
                    cell(m.overlap),
                    cell(m.separation)
                );
            }
        }
        out
    }
}

/// Metrics for one snapshot. `band` is the snapshot's layout band, if any.
pub fn metric_entry(
    snapshot_index: usize,
    snapshot: &Snapshot,
    band: Option<&BandLayout>,
    options: &MetricOptions,
) -> Result<MetricEntry, MetricsError> {
    let features = snapshot.feature(&options.source).ok_or_else(|| {
        MetricsError::Invalid(format!("snapshot has no feature source `{}`", options.source))
    })?;
    let labels = &snapshot.labels;
    let group_of = |i: usize| -> Option<String> {
        match &options.group_column {
            Some(c) => labels.value(i, c).filter(|v| !v.is_empty()).map(str::to_string),
            None => Some(options.source.clone()),
        }
    };
    if let Some(c) = &options.group_column {
        if !labels.columns.iter().any(|x| x == c) {
            return Err(MetricsError::Invalid(format!("unknown group column `{c}`")));
        }
    }

    let mut real_rows = Vec::new();
    let mut real_groups = Vec::new();
    let mut gen_rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut real_by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut groups = BTreeSet::new();
    for (i, row) in labels.rows.iter().enumerate() {
        let Some(g) = group_of(i) else { continue };
        groups.insert(g.clone());
        match row.origin {
            Origin::Real => {
                real_rows.push(i);
                real_groups.push(g.clone());
                real_by_group.entry(g).or_default().push(i);
            }
            Origin::Generated => gen_rows.entry(g).or_default().push(i),
        }
    }
    let real = features.select(&real_rows);

    let separation = match band {
        None => None,
        Some(b) => {
            let map = labels
                .rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| group_of(i).map(|g| (r.instance_id.clone(), g)))
                .collect();
            match group_separation(b, &map) {
                Ok(s) => Some(s),
                Err(MetricsError::SeparationUndefined(_)) => None,
                Err(e) => return Err(e),
            }
        }
    };

    let empty = Vec::new();
    let cells: Vec<(String, GroupMetrics)> = groups
        .into_par_iter()
        .map(|g| {
            let rr = real_by_group.get(&g).unwrap_or(&empty);
            let gr = gen_rows.get(&g).unwrap_or(&empty);
            let mut m = GroupMetrics {
                real_count: rr.len(),
                generated_count: gr.len(),
                ..GroupMetrics::default()
            };
            if gr.is_empty() {
                m.flags.push(FLAG_NO_GENERATED.into());
            } else {
                let gen = features.select(gr);
                if rr.len() < 2 {
                    m.flags.push(FLAG_FID_FEW_REAL.into());
                } else if gr.len() < 2 {
                    m.flags.push(FLAG_FID_FEW_GENERATED.into());
                } else {
                    let report = fid_detailed(&features.select(rr), &gen)?;
                    m.fid = Some(report.value);
                    m.fid_epsilon = Some(report.epsilon_real.max(report.epsilon_gen));
                    if report.regularized() {
                        m.flags.push(FLAG_FID_REGULARIZED.into());
                    }
                }
                if real.rows() < options.k {
                    m.flags.push(FLAG_OVERLAP_FEW_REAL.into());
                } else {
                    m.overlap = Some(neighborhood_overlap(&real, &real_groups, &gen, &g, options.k)?);
                }
            }
            match (&separation, band) {
                (_, None) => m.flags.push(FLAG_NO_LAYOUT.into()),
                (Some(s), _) => m.separation = s.get(&g).copied(),
                (None, Some(_)) => m.flags.push(FLAG_SEPARATION_UNDEFINED.into()),
            }
            Ok((g, m))
        })
        .collect::<Result<_, MetricsError>>()?;

    Ok(MetricEntry {
        snapshot_index,
        training_iteration: snapshot.training_iteration,
        groups: cells.into_iter().collect(),
        losses: snapshot.metrics.clone(),
    })
}

/// Metrics for every snapshot, band `i` of `layout` pairing with snapshot `i`.
pub fn build_metric_series(
    snapshots: &[Snapshot],
    layout: Option<&EvolutionLayout>,
    options: &MetricOptions,
) -> Result<MetricSeries, MetricsError> {
    if let Some(l) = layout {
        if l.len() != snapshots.len() {
            return Err(MetricsError::Invalid(format!(
                "layout has {} bands for {} snapshots",
                l.len(),
                snapshots.len()
            )));
        }
    }
    let mut series = MetricSeries::default();
    for (i, s) in snapshots.iter().enumerate() {
        let band = layout.map(|l| &l.bands[i]);
        series.push(metric_entry(i, s, band, options)?)?;
    }
    Ok(series)
}
