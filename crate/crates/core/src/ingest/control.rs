use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{io_err, write_atomic, IngestError};

pub const CONTROL_FILE: &str = "control.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DesiredState {
    #[default]
    Running,
    Paused,
}

impl fmt::Display for DesiredState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DesiredState::Running => "running",
            DesiredState::Paused => "paused",
        })
    }
}

impl FromStr for DesiredState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "running" => Ok(DesiredState::Running),
            "paused" => Ok(DesiredState::Paused),
            other => Err(format!("desired_state must be `running` or `paused`, got `{other}`")),
        }
    }
}

/// The record a trainer polls between batches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ControlState {
    pub desired_state: DesiredState,
    pub revision: u64,
    #[serde(default)]
    pub note: String,
}

impl ControlState {
    /// Successor state; the revision is bumped even if nothing else changes.
    pub fn next(&self, desired_state: DesiredState, note: impl Into<String>) -> ControlState {
        ControlState {
            desired_state,
            revision: self.revision + 1,
            note: note.into(),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec(self).expect("control serializes");
        b.push(b'\n');
        b
    }
}

/// `Ok(None)` if the run has no control file yet.
pub fn read_control(run_dir: &Path) -> Result<Option<ControlState>, IngestError> {
    let path = run_dir.join(CONTROL_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|source| IngestError::Json { path, source }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Replaces `control.json` atomically.
pub fn write_control(run_dir: &Path, state: &ControlState) -> Result<(), IngestError> {
    write_atomic(&run_dir.join(CONTROL_FILE), &state.to_json_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_format() {
        let s = ControlState::default().next(DesiredState::Paused, "");
        assert_eq!(
            String::from_utf8(s.to_json_bytes()).unwrap(),
            "{\"desired_state\":\"paused\",\"revision\":1,\"note\":\"\"}\n"
        );
    }

    #[test]
    fn idempotent_requests_bump_revision() {
        let a = ControlState::default().next(DesiredState::Paused, "x");
        let b = a.next(DesiredState::Paused, "x");
        assert_eq!((a.revision, b.revision), (1, 2));
    }

    #[test]
    fn roundtrip_and_absent() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_control(dir.path()).unwrap(), None);
        let s = ControlState {
            desired_state: DesiredState::Paused,
            revision: 7,
            note: "check grey".into(),
        };
        write_control(dir.path(), &s).unwrap();
        assert_eq!(read_control(dir.path()).unwrap(), Some(s));
    }
}
