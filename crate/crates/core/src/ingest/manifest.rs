use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, is_safe_name, write_atomic, IngestError};
use crate::embedding::EmbeddingConfig;

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub dims: usize,
}

/// `run.json`: everything fixed for the lifetime of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Training iterations between snapshots.
    pub cadence_n: u64,
    pub sources: Vec<SourceSpec>,
    /// Must contain `"origin"`.
    pub label_columns: Vec<String>,
    pub embedding: EmbeddingConfig,
    /// RFC 3339, UTC.
    pub created_at: String,
    /// Source that drives the embedding; defaults to the first source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primary_source: Option<String>,
    /// Source used for FID and overlap; defaults to the primary source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_source: Option<String>,
    /// Label column that defines groups; defaults to the first non-origin column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_column: Option<String>,
}

impl RunManifest {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fail = |m: String| Err(IngestError::Manifest(m));
        if !is_safe_name(&self.run_id) {
            return fail(format!("run_id `{}` is not a valid directory name", self.run_id));
        }
        if self.cadence_n < 1 {
            return fail("cadence_n must be at least 1".into());
        }
        if self.sources.is_empty() {
            return fail("at least one source is required".into());
        }
        let mut names = HashSet::new();
        for s in &self.sources {
            if !is_safe_name(&s.name) {
                return fail(format!("source name `{}` is not usable in a file name", s.name));
            }
            if s.dims == 0 {
                return fail(format!("source `{}` has zero dims", s.name));
            }
            if !names.insert(s.name.as_str()) {
                return fail(format!("duplicate source name `{}`", s.name));
            }
        }
        if !self.label_columns.iter().any(|c| c == "origin") {
            return fail("label_columns must include `origin`".into());
        }
        let mut cols = HashSet::new();
        for c in &self.label_columns {
            if c == "instance_id" || !is_safe_name(c) {
                return fail(format!("invalid label column `{c}`"));
            }
            if !cols.insert(c.as_str()) {
                return fail(format!("duplicate label column `{c}`"));
            }
        }
        for (what, src) in [
            ("primary_source", &self.primary_source),
            ("metric_source", &self.metric_source),
        ] {
            if let Some(s) = src {
                if !names.contains(s.as_str()) {
                    return fail(format!("{what} `{s}` is not a declared source"));
                }
            }
        }
        if let Some(g) = &self.group_column {
            if g == "origin" || !cols.contains(g.as_str()) {
                return fail(format!("group_column `{g}` is not a declared label column"));
            }
        }
        self.embedding
            .validate()
            .map_err(|e| IngestError::Manifest(e.to_string()))
    }

    pub fn primary_source(&self) -> &str {
        self.primary_source
            .as_deref()
            .unwrap_or(self.sources[0].name.as_str())
    }

    pub fn metric_source(&self) -> &str {
        self.metric_source
            .as_deref()
            .unwrap_or_else(|| self.primary_source())
    }

    pub fn group_column(&self) -> Option<&str> {
        self.group_column
            .as_deref()
            .or_else(|| self.extra_label_columns().next())
    }

    /// Label columns other than `origin`, in declaration order. This is the
    /// column order of `labels.csv` after `instance_id,origin`.
    pub fn extra_label_columns(&self) -> impl Iterator<Item = &str> {
        self.label_columns
            .iter()
            .map(String::as_str)
            .filter(|c| *c != "origin")
    }

    pub fn source(&self, name: &str) -> Option<&SourceSpec> {
        self.sources.iter().find(|s| s.name == name)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(self).expect("manifest serializes");
        b.push(b'\n');
        b
    }
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, IngestError> {
    let path = run_dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let m: RunManifest =
        serde_json::from_slice(&bytes).map_err(|source| IngestError::Json { path, source })?;
    m.validate()?;
    Ok(m)
}

pub fn write_manifest(run_dir: &Path, manifest: &RunManifest) -> Result<(), IngestError> {
    manifest.validate()?;
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    write_atomic(&run_dir.join(MANIFEST_FILE), &manifest.to_json_bytes())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn manifest() -> RunManifest {
        RunManifest {
            run_id: "run-a".into(),
            cadence_n: 5000,
            sources: vec![
                SourceSpec {
                    name: "clip".into(),
                    dims: 3,
                },
                SourceSpec {
                    name: "disc_feat".into(),
                    dims: 2,
                },
            ],
            label_columns: vec!["origin".into(), "color".into()],
            embedding: EmbeddingConfig::default(),
            created_at: "2024-01-01T00:00:00Z".into(),
            primary_source: None,
            metric_source: None,
            group_column: None,
        }
    }

    #[test]
    fn defaults_resolve() {
        let m = manifest();
        m.validate().unwrap();
        assert_eq!(m.primary_source(), "clip");
        assert_eq!(m.metric_source(), "clip");
        assert_eq!(m.group_column(), Some("color"));
    }

    #[test]
    fn duplicate_sources_rejected() {
        let mut m = manifest();
        m.sources[1].name = "clip".into();
        assert!(matches!(m.validate(), Err(IngestError::Manifest(_))));
    }

    #[test]
    fn origin_required() {
        let mut m = manifest();
        m.label_columns = vec!["color".into()];
        assert!(m.validate().is_err());
    }

    #[test]
    fn zero_cadence_rejected() {
        let mut m = manifest();
        m.cadence_n = 0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn roundtrip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest();
        write_manifest(dir.path(), &m).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
    }
}
