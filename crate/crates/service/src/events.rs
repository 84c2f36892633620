use evowatch_core::ingest::{ControlState, ValidationIssue};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SnapshotIngested,
    LayoutUpdated,
    MetricsUpdated,
    ControlChanged,
    IngestError,
}

/// Event details. Which fields are set depends on the kind:
///
/// - `snapshot_ingested`: `training_iteration`, `snapshot_index`
/// - `layout_updated`: `training_iteration`, `snapshot_index`, `layout_version`
/// - `metrics_updated`: `training_iteration`, `snapshot_index`, `metric_entries`
/// - `control_changed`: `control`
/// - `ingest_error`: `message`, plus `training_iteration` and `issues` when known
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventPayload {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_iteration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_version: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_entries: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<ValidationIssue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Starts at 1 and increases by one per event within a run.
    pub seq: u64,
    pub kind: EventKind,
    #[serde(flatten)]
    pub payload: EventPayload,
}

/// Response body of the events endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventBatch {
    pub events: Vec<EventRecord>,
    /// Highest sequence number issued so far; use it as the next `after`.
    pub last_seq: u64,
}

#[derive(Debug, Default)]
pub(crate) struct EventLog {
    records: Vec<EventRecord>,
}

impl EventLog {
    pub(crate) fn append(&mut self, kind: EventKind, payload: EventPayload) -> u64 {
        let seq = self.records.len() as u64 + 1;
        self.records.push(EventRecord { seq, kind, payload });
        seq
    }

    pub(crate) fn last_seq(&self) -> u64 {
        self.records.len() as u64
    }

    pub(crate) fn after(&self, after: u64) -> Vec<EventRecord> {
        let start = (after as usize).min(self.records.len());
        self.records[start..].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_is_gap_free() {
        let mut log = EventLog::default();
        for _ in 0..5 {
            log.append(EventKind::SnapshotIngested, EventPayload::default());
        }
        let seqs: Vec<u64> = log.after(0).iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4, 5]);
        assert_eq!(log.after(3).len(), 2);
        assert!(log.after(99).is_empty());
    }

    #[test]
    fn payload_is_flattened() {
        let rec = EventRecord {
            seq: 3,
            kind: EventKind::LayoutUpdated,
            payload: EventPayload {
                training_iteration: Some(5000),
                layout_version: Some(2),
                ..Default::default()
            },
        };
        let text = serde_json::to_string(&rec).unwrap();
        assert_eq!(
            text,
            r#"{"seq":3,"kind":"layout_updated","training_iteration":5000,"layout_version":2}"#
        );
        let back: EventRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, rec);
    }
}
