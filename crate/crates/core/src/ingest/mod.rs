//! The run directory: file formats, validation, watching, control, simulation.
//!
//! ```text
//! <run_dir>/run.json            manifest (UTF-8 JSON)
//! <run_dir>/control.json        ControlState, replaced atomically (temp file + rename)
//! <run_dir>/snapshots/iter_<9-digit>/meta.json
//!                               labels.csv        instance_id,origin,<label columns...>
//!                               feat_<source>.f32 float32 little-endian, row-major
//!                               thumbs/<instance_id>.png   optional
//!                               DONE              zero bytes, written last
//! ```

mod control;
mod manifest;
mod simulate;
mod snapshot;
mod validate;
mod watch;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use control::{read_control, write_control, ControlState, DesiredState, CONTROL_FILE};
pub use manifest::{read_manifest, write_manifest, RunManifest, SourceSpec, MANIFEST_FILE};
pub use simulate::{simulate_run, Scenario, Simulation, SimulationParams};
pub use snapshot::{
    decode_f32_le, encode_f32_le, ids_digest, list_snapshot_dirs, parse_snapshot_dir_name,
    snapshot_dir_name, thumbnail_path, write_snapshot, LabelRow, LabelTable, Origin, Snapshot, SnapshotDir,
    SourceMeta, SnapshotMeta, DONE_FILE, SNAPSHOTS_DIR,
};
pub use validate::{validate_snapshot, IssueRule, ValidationIssue, ValidationReport};
pub use watch::{watch_run, RunWatcher, WatchEvent, WatchHandle};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("snapshot does not match the manifest: {0}")]
    Snapshot(String),
    #[error("snapshot directory already exists: {0}")]
    Collision(PathBuf),
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("unknown scenario `{0}` (valid: split, converge, bias)")]
    UnknownScenario(String),
    #[error("invalid simulation parameters: {0}")]
    Simulation(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    use std::io::Write;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Names usable as a single path component (run ids, source names, instance ids).
pub(crate) fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && !s
            .chars()
            .any(|c| matches!(c, '/' | '\\' | ',' | '\n' | '\r' | '"' | '\0'))
}
