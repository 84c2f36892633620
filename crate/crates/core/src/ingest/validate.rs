use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::RunManifest;
use super::snapshot::{
    decode_f32_le, feature_file_name, ids_digest, parse_snapshot_dir_name, LabelRow, LabelTable,
    Origin, Snapshot, SnapshotMeta, DONE_FILE, LABELS_FILE, META_FILE, THUMBS_DIR,
};
use super::is_safe_name;
use crate::features::FeatureMatrix;

/// Issues beyond this many per file are summarized in one extra line.
const MAX_ISSUES_PER_FILE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueRule {
    /// `DONE` is missing; the snapshot is still being written or was abandoned.
    Incomplete,
    Missing,
    Parse,
    Schema,
    Rows,
    Size,
    Value,
    Order,
    DuplicateId,
    Iteration,
}

impl fmt::Display for IssueRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("rule serializes");
        f.write_str(s.as_str().expect("rule is a string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    /// File name relative to the snapshot directory.
    pub file: String,
    /// 0-based data row (labels.csv: excluding the header; feature files: matrix row).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub rule: IssueRule,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.file)?;
        if let Some(r) = self.row {
            write!(f, " row {r}")?;
        }
        write!(f, " [{}] {}", self.rule, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dir: PathBuf,
    /// Iteration parsed from the directory name, when it parses.
    pub iteration: Option<u64>,
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_incomplete(&self) -> bool {
        self.issues.iter().any(|i| i.rule == IssueRule::Incomplete)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} issue(s)", self.dir.display(), self.issues.len())?;
        for i in &self.issues {
            write!(f, "\n  {i}")?;
        }
        Ok(())
    }
}

struct Issues(Vec<ValidationIssue>);

impl Issues {
    fn push(&mut self, file: &str, row: Option<usize>, rule: IssueRule, message: impl Into<String>) {
        self.0.push(ValidationIssue {
            file: file.to_string(),
            row,
            rule,
            message: message.into(),
        });
    }
}

/// Loads and checks a completed snapshot directory against the run manifest.
/// Every problem found is reported; the snapshot is returned only if there are none.
pub fn validate_snapshot(dir: &Path, manifest: &RunManifest) -> Result<Snapshot, ValidationReport> {
    let dir_iteration = dir
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_snapshot_dir_name);
    let report = |issues: Vec<ValidationIssue>| ValidationReport {
        dir: dir.to_path_buf(),
        iteration: dir_iteration,
        issues,
    };
    let mut issues = Issues(Vec::new());

    if !dir.join(DONE_FILE).is_file() {
        issues.push(DONE_FILE, None, IssueRule::Incomplete, "no DONE sentinel; snapshot incomplete");
        return Err(report(issues.0));
    }

    let meta = match std::fs::read(dir.join(META_FILE)) {
        Err(e) => {
            issues.push(META_FILE, None, IssueRule::Missing, e.to_string());
            None
        }
        Ok(bytes) => match serde_json::from_slice::<SnapshotMeta>(&bytes) {
            Ok(m) => Some(m),
            Err(e) => {
                issues.push(META_FILE, None, IssueRule::Parse, e.to_string());
                None
            }
        },
    };
    if let Some(m) = &meta {
        check_meta(m, dir_iteration, manifest, &mut issues);
    }

    let labels = read_labels(&dir.join(LABELS_FILE), manifest, &mut issues);

    let mut features = Vec::with_capacity(manifest.sources.len());
    if let (Some(meta), Some(labels)) = (&meta, &labels) {
        let digest = ids_digest(&labels.rows.iter().map(|r| r.instance_id.as_str()).collect::<Vec<_>>());
        let ids = labels.instance_ids();
        for spec in &manifest.sources {
            let Some(sm) = meta.sources.iter().find(|s| s.name == spec.name) else {
                continue;
            };
            let file = feature_file_name(&spec.name);
            if sm.rows != labels.len() {
                issues.push(
                    META_FILE,
                    None,
                    IssueRule::Rows,
                    format!("source `{}` declares {} rows, {LABELS_FILE} has {}", spec.name, sm.rows, labels.len()),
                );
            }
            if let Some(d) = &sm.ids_sha256 {
                if *d != digest {
                    issues.push(
                        &file,
                        None,
                        IssueRule::Order,
                        format!("rows were written for a different instance order than {LABELS_FILE}"),
                    );
                }
            }
            if let Some(f) = read_features(dir, &file, &spec.name, spec.dims, &ids, &mut issues) {
                features.push(f);
            }
        }
    }

    let thumbnails = read_thumbnails(dir, labels.as_ref(), &mut issues);

    if !issues.0.is_empty() {
        return Err(report(issues.0));
    }
    let (meta, labels) = (meta.expect("no issues"), labels.expect("no issues"));
    Ok(Snapshot {
        training_iteration: meta.iteration,
        features,
        labels,
        metrics: meta.metrics,
        thumbnails,
    })
}

fn check_meta(meta: &SnapshotMeta, dir_iteration: Option<u64>, manifest: &RunManifest, issues: &mut Issues) {
    match dir_iteration {
        None => issues.push(META_FILE, None, IssueRule::Iteration, "directory name is not iter_<9 digits>"),
        Some(it) if it != meta.iteration => issues.push(
            META_FILE,
            None,
            IssueRule::Iteration,
            format!("iteration {} does not match directory iteration {it}", meta.iteration),
        ),
        _ => {}
    }
    let mut seen = HashSet::new();
    for s in &meta.sources {
        if !seen.insert(s.name.as_str()) {
            issues.push(META_FILE, None, IssueRule::Schema, format!("source `{}` listed twice", s.name));
        }
        match manifest.source(&s.name) {
            None => issues.push(META_FILE, None, IssueRule::Schema, format!("unknown source `{}`", s.name)),
            Some(spec) if spec.dims != s.dims => issues.push(
                META_FILE,
                None,
                IssueRule::Schema,
                format!("source `{}` has {} dims, manifest says {}", s.name, s.dims, spec.dims),
            ),
            _ => {}
        }
    }
    for spec in &manifest.sources {
        if !seen.contains(spec.name.as_str()) {
            issues.push(META_FILE, None, IssueRule::Schema, format!("source `{}` is missing", spec.name));
        }
    }
}

fn read_labels(path: &Path, manifest: &RunManifest, issues: &mut Issues) -> Option<LabelTable> {
    let mut reader = match csv::ReaderBuilder::new().has_headers(true).from_path(path) {
        Ok(r) => r,
        Err(e) => {
            issues.push(LABELS_FILE, None, IssueRule::Missing, e.to_string());
            return None;
        }
    };
    let header = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            issues.push(LABELS_FILE, None, IssueRule::Parse, e.to_string());
            return None;
        }
    };
    let columns: Vec<String> = manifest.extra_label_columns().map(str::to_string).collect();
    let before = issues.0.len();
    if header.get(0) != Some("instance_id") || header.get(1) != Some("origin") {
        issues.push(LABELS_FILE, None, IssueRule::Schema, "header must start with instance_id,origin");
        return None;
    }
    // position in the file of each manifest column
    let mut source_col: HashMap<&str, usize> = HashMap::new();
    for (i, name) in header.iter().enumerate().skip(2) {
        if !columns.iter().any(|c| c == name) {
            issues.push(LABELS_FILE, None, IssueRule::Schema, format!("unknown label column `{name}`"));
        } else if source_col.insert(name, i).is_some() {
            issues.push(LABELS_FILE, None, IssueRule::Schema, format!("label column `{name}` appears twice"));
        }
    }
    for c in &columns {
        if !source_col.contains_key(c.as_str()) {
            issues.push(LABELS_FILE, None, IssueRule::Schema, format!("missing label column `{c}`"));
        }
    }
    if issues.0.len() > before {
        return None;
    }

    let mut rows = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut row_issues = 0;
    let mut note = |issues: &mut Issues, row: usize, rule: IssueRule, msg: String| {
        row_issues += 1;
        if row_issues <= MAX_ISSUES_PER_FILE {
            issues.push(LABELS_FILE, Some(row), rule, msg);
        }
    };
    for (row, rec) in reader.records().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                note(issues, row, IssueRule::Parse, e.to_string());
                continue;
            }
        };
        let id = rec.get(0).unwrap_or_default().to_string();
        if !is_safe_name(&id) {
            note(issues, row, IssueRule::Value, format!("invalid instance_id `{id}`"));
        } else if !seen.insert(id.clone()) {
            note(issues, row, IssueRule::DuplicateId, format!("duplicate instance_id `{id}`"));
        }
        let origin = match rec.get(1).unwrap_or_default().parse::<Origin>() {
            Ok(o) => o,
            Err(e) => {
                note(issues, row, IssueRule::Value, e);
                continue;
            }
        };
        let values = columns
            .iter()
            .map(|c| rec.get(source_col[c.as_str()]).unwrap_or_default().to_string())
            .collect();
        rows.push(LabelRow {
            instance_id: id,
            origin,
            values,
        });
    }
    if row_issues > MAX_ISSUES_PER_FILE {
        issues.push(
            LABELS_FILE,
            None,
            IssueRule::Value,
            format!("{} further row issues not listed", row_issues - MAX_ISSUES_PER_FILE),
        );
    }
    (row_issues == 0).then_some(LabelTable { columns, rows })
}

fn read_features(
    dir: &Path,
    file: &str,
    source: &str,
    dims: usize,
    ids: &[String],
    issues: &mut Issues,
) -> Option<FeatureMatrix> {
    let bytes = match std::fs::read(dir.join(file)) {
        Ok(b) => b,
        Err(e) => {
            issues.push(file, None, IssueRule::Missing, e.to_string());
            return None;
        }
    };
    let expected = 4 * ids.len() * dims;
    if bytes.len() != expected {
        issues.push(
            file,
            None,
            IssueRule::Size,
            format!("{} bytes, expected {expected} (4 x {} rows x {dims} dims)", bytes.len(), ids.len()),
        );
        return None;
    }
    let data = decode_f32_le(&bytes).expect("length checked");
    let bad: Vec<usize> = data
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .map(|(i, _)| i)
        .collect();
    if !bad.is_empty() {
        for &i in bad.iter().take(MAX_ISSUES_PER_FILE) {
            issues.push(
                file,
                Some(i / dims),
                IssueRule::Value,
                format!("non-finite value {} in column {}", data[i], i % dims),
            );
        }
        if bad.len() > MAX_ISSUES_PER_FILE {
            issues.push(
                file,
                None,
                IssueRule::Value,
                format!("{} further non-finite values not listed", bad.len() - MAX_ISSUES_PER_FILE),
            );
        }
        return None;
    }
    match FeatureMatrix::new(source, ids.to_vec(), dims, data) {
        Ok(f) => Some(f),
        Err(e) => {
            issues.push(file, None, IssueRule::Value, e.to_string());
            None
        }
    }
}

fn read_thumbnails(dir: &Path, labels: Option<&LabelTable>, issues: &mut Issues) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let thumbs = dir.join(THUMBS_DIR);
    let Ok(entries) = std::fs::read_dir(&thumbs) else {
        return out;
    };
    let known: Option<HashSet<&str>> =
        labels.map(|l| l.rows.iter().map(|r| r.instance_id.as_str()).collect());
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        let file = format!("{THUMBS_DIR}/{name}");
        let Some(id) = name.strip_suffix(".png") else {
            issues.push(&file, None, IssueRule::Schema, "thumbnails must be <instance_id>.png");
            continue;
        };
        if let Some(k) = &known {
            if !k.contains(id) {
                issues.push(&file, None, IssueRule::Schema, format!("thumbnail for unknown instance `{id}`"));
                continue;
            }
        }
        match std::fs::read(entry.path()) {
            Ok(b) => {
                out.insert(id.to_string(), b);
            }
            Err(e) => issues.push(&file, None, IssueRule::Missing, e.to_string()),
        }
    }
    out
}
