use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{read_manifest, RunManifest};
use super::{io_err, is_safe_name, IngestError};
use crate::features::FeatureMatrix;

pub const SNAPSHOTS_DIR: &str = "snapshots";
pub const DONE_FILE: &str = "DONE";
pub(crate) const META_FILE: &str = "meta.json";
pub(crate) const LABELS_FILE: &str = "labels.csv";
pub(crate) const THUMBS_DIR: &str = "thumbs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Generated,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::Generated => "generated",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(Origin::Real),
            "generated" => Ok(Origin::Generated),
            other => Err(format!("origin must be `real` or `generated`, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub instance_id: String,
    pub origin: Origin,
    /// One value per entry of [`LabelTable::columns`].
    pub values: Vec<String>,
}

/// Contents of `labels.csv`. `columns` excludes `instance_id` and `origin`
/// and follows the manifest's declaration order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelTable {
    pub columns: Vec<String>,
    pub rows: Vec<LabelRow>,
}

impl LabelTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.rows.iter().map(|r| r.instance_id.clone()).collect()
    }

    /// Value of `column` for row `i`; `origin` is addressable like any column.
    pub fn value(&self, i: usize, column: &str) -> Option<&str> {
        let row = &self.rows[i];
        if column == "origin" {
            return Some(row.origin.as_str());
        }
        let c = self.columns.iter().position(|c| c == column)?;
        Some(row.values[c].as_str())
    }

    /// instance_id → value of `column`, skipping empty values.
    pub fn column_map(&self, column: &str) -> HashMap<String, String> {
        (0..self.rows.len())
            .filter_map(|i| {
                let v = self.value(i, column)?;
                (!v.is_empty()).then(|| (self.rows[i].instance_id.clone(), v.to_string()))
            })
            .collect()
    }

    pub(crate) fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["instance_id", "origin"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.instance_id.as_str(), r.origin.as_str()];
            rec.extend(r.values.iter().map(String::as_str));
            w.write_record(&rec).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Everything extracted at one training checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub training_iteration: u64,
    /// One block per manifest source, in manifest order, rows in label order.
    pub features: Vec<FeatureMatrix>,
    pub labels: LabelTable,
    /// Scalar training metrics such as losses.
    pub metrics: BTreeMap<String, f64>,
    /// PNG bytes per instance_id.
    pub thumbnails: BTreeMap<String, Vec<u8>>,
}

impl Snapshot {
    pub fn feature(&self, source: &str) -> Option<&FeatureMatrix> {
        self.features.iter().find(|f| f.source_name() == source)
    }

    /// Checks the invariants that `write_snapshot` relies on.
    pub fn check_against(&self, manifest: &RunManifest) -> Result<(), IngestError> {
        let fail = |m: String| Err(IngestError::Snapshot(m));
        let extra: Vec<&str> = manifest.extra_label_columns().collect();
        if self.labels.columns.iter().map(String::as_str).ne(extra.iter().copied()) {
            return fail(format!(
                "label columns {:?} differ from the manifest's {:?}",
                self.labels.columns, extra
            ));
        }
        let mut seen = HashSet::new();
        for (i, r) in self.labels.rows.iter().enumerate() {
            if !is_safe_name(&r.instance_id) {
                return fail(format!("row {i}: invalid instance_id `{}`", r.instance_id));
            }
            if !seen.insert(r.instance_id.as_str()) {
                return fail(format!("row {i}: duplicate instance_id `{}`", r.instance_id));
            }
            if r.values.len() != extra.len() {
                return fail(format!("row {i}: {} label values for {} columns", r.values.len(), extra.len()));
            }
            if r.values.iter().any(|v| v.contains(['\n', '\r'])) {
                return fail(format!("row {i}: label values may not contain line breaks"));
            }
        }
        if self.features.len() != manifest.sources.len() {
            return fail(format!(
                "{} feature blocks for {} declared sources",
                self.features.len(),
                manifest.sources.len()
            ));
        }
        for (f, spec) in self.features.iter().zip(&manifest.sources) {
            if f.source_name() != spec.name {
                return fail(format!("feature block `{}` where `{}` was expected", f.source_name(), spec.name));
            }
            if f.dims() != spec.dims {
                return fail(format!("source `{}` has {} dims, manifest says {}", spec.name, f.dims(), spec.dims));
            }
            if f.rows() != self.labels.len()
                || f.instance_ids().iter().zip(&self.labels.rows).any(|(a, r)| *a != r.instance_id)
            {
                return fail(format!("source `{}` rows are not in label order", spec.name));
            }
        }
        if let Some((k, _)) = self.metrics.iter().find(|(_, v)| !v.is_finite()) {
            return fail(format!("metric `{k}` is not finite"));
        }
        if let Some(id) = self.thumbnails.keys().find(|id| !seen.contains(id.as_str())) {
            return fail(format!("thumbnail for unknown instance `{id}`"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub name: String,
    pub rows: usize,
    pub dims: usize,
    /// Hex SHA-256 of the newline-joined instance ids in row order; lets a
    /// reader detect a labels file reordered after the features were written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids_sha256: Option<String>,
}

/// `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub iteration: u64,
    pub sources: Vec<SourceMeta>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

pub fn ids_digest<S: AsRef<str>>(ids: &[S]) -> String {
    let mut h = Sha256::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            h.update(b"\n");
        }
        h.update(id.as_ref().as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn encode_f32_le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Decodes little-endian float32 values; `None` if the length is not a multiple of 4.
pub fn decode_f32_le(bytes: &[u8]) -> Option<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return None;
    }
    Some(
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    )
}

pub fn snapshot_dir_name(iteration: u64) -> String {
    format!("iter_{iteration:09}")
}

/// Location of a stored thumbnail; `None` if the id cannot be a file name.
pub fn thumbnail_path(run_dir: &Path, iteration: u64, instance_id: &str) -> Option<PathBuf> {
    is_safe_name(instance_id).then(|| {
        run_dir
            .join(SNAPSHOTS_DIR)
            .join(snapshot_dir_name(iteration))
            .join(THUMBS_DIR)
            .join(format!("{instance_id}.png"))
    })
}

pub fn parse_snapshot_dir_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("iter_")?;
    if digits.len() < 9 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub(crate) fn feature_file_name(source: &str) -> String {
    format!("feat_{source}.f32")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotDir {
    pub iteration: u64,
    pub path: PathBuf,
    pub complete: bool,
}

/// Snapshot directories under `run_dir/snapshots`, ascending by iteration.
/// A missing `snapshots` directory yields an empty list.
pub fn list_snapshot_dirs(run_dir: &Path) -> Result<Vec<SnapshotDir>, IngestError> {
    let root = run_dir.join(SNAPSHOTS_DIR);
    let entries = match std::fs::read_dir(&root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(&root)(e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(io_err(&root))?;
        let Some(iteration) = entry.file_name().to_str().and_then(parse_snapshot_dir_name) else {
            continue;
        };
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let complete = path.join(DONE_FILE).is_file();
        out.push(SnapshotDir {
            iteration,
            path,
            complete,
        });
    }
    out.sort_by_key(|d| d.iteration);
    Ok(out)
}

/// Writes `snapshot` under `run_dir/snapshots/iter_<9 digits>`. Files go in
/// the order meta, labels, features, thumbnails; the `DONE` sentinel is last.
pub fn write_snapshot(run_dir: &Path, snapshot: &Snapshot) -> Result<PathBuf, IngestError> {
    let manifest = read_manifest(run_dir)?;
    snapshot.check_against(&manifest)?;

    let root = run_dir.join(SNAPSHOTS_DIR);
    std::fs::create_dir_all(&root).map_err(io_err(&root))?;
    let dir = root.join(snapshot_dir_name(snapshot.training_iteration));
    match std::fs::create_dir(&dir) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(IngestError::Collision(dir))
        }
        Err(e) => return Err(io_err(&dir)(e)),
    }

    let ids = snapshot.labels.instance_ids();
    let digest = ids_digest(&ids);
    let meta = SnapshotMeta {
        iteration: snapshot.training_iteration,
        sources: snapshot
            .features
            .iter()
            .map(|f| SourceMeta {
                name: f.source_name().to_string(),
                rows: f.rows(),
                dims: f.dims(),
                ids_sha256: Some(digest.clone()),
            })
            .collect(),
        metrics: snapshot.metrics.clone(),
    };
    let mut meta_bytes = serde_json::to_vec(&meta).expect("meta serializes");
    meta_bytes.push(b'\n');
    write_file(&dir.join(META_FILE), &meta_bytes)?;
    write_file(&dir.join(LABELS_FILE), &snapshot.labels.to_csv_bytes())?;
    for f in &snapshot.features {
        write_file(&dir.join(feature_file_name(f.source_name())), &encode_f32_le(f.data()))?;
    }
    if !snapshot.thumbnails.is_empty() {
        let thumbs = dir.join(THUMBS_DIR);
        std::fs::create_dir(&thumbs).map_err(io_err(&thumbs))?;
        for (id, png) in &snapshot.thumbnails {
            write_file(&thumbs.join(format!("{id}.png")), png)?;
        }
    }
    write_file(&dir.join(DONE_FILE), &[])?;
    Ok(dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.sync_all().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_name_padding() {
        assert_eq!(snapshot_dir_name(5000), "iter_000005000");
        assert_eq!(snapshot_dir_name(0), "iter_000000000");
        assert_eq!(parse_snapshot_dir_name("iter_000005000"), Some(5000));
        assert_eq!(parse_snapshot_dir_name("iter_5000"), None);
        assert_eq!(parse_snapshot_dir_name("iter_00000500x"), None);
        assert_eq!(parse_snapshot_dir_name("iter_1234567890"), Some(1_234_567_890));
    }

    #[test]
    fn thumbnail_paths_stay_inside_the_snapshot() {
        let p = thumbnail_path(Path::new("/runs/r"), 5000, "gen-1").unwrap();
        assert_eq!(p, Path::new("/runs/r/snapshots/iter_000005000/thumbs/gen-1.png"));
        for bad in ["..", ".", "", "a/b", "a\\b"] {
            assert!(thumbnail_path(Path::new("/runs/r"), 5000, bad).is_none(), "{bad}");
        }
    }

    #[test]
    fn known_bytes_decode() {
        let bytes = [0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x00];
        assert_eq!(decode_f32_le(&bytes).unwrap(), vec![1.0, -2.0, 0.0]);
        assert_eq!(encode_f32_le(&[1.0, -2.0, 0.0]), bytes);
        assert!(decode_f32_le(&bytes[..11]).is_none());
    }

    #[test]
    fn digest_is_order_sensitive() {
        assert_ne!(ids_digest(&["a", "b"]), ids_digest(&["b", "a"]));
        assert_ne!(ids_digest(&["ab"]), ids_digest(&["a", "b"]));
    }
}
