use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use arc_swap::{ArcSwap, ArcSwapOption};
use evowatch_core::embedding::BandDocument;
use evowatch_core::ingest::{
    write_control, ControlState, DesiredState, LabelTable, RunManifest, RunWatcher, Snapshot,
    ValidationReport, WatchEvent,
};
use evowatch_core::metrics::{metric_entry, MetricOptions, MetricSeries};
use evowatch_core::{append_iteration, embed_first, EmbeddingConfig, EmbeddingMode, EvolutionLayout};
use parking_lot::Mutex;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use crate::events::{EventBatch, EventKind, EventLog, EventPayload};
use crate::ServiceError;

/// One published layout. Never modified after publication.
#[derive(Debug)]
pub struct LayoutVersion {
    pub layout: EvolutionLayout,
    /// Label table of each band's snapshot, indexed like `layout.bands`.
    pub labels: Vec<Arc<LabelTable>>,
    /// The layout export, as served by `layout.json`.
    pub export: Vec<u8>,
}

impl LayoutVersion {
    /// Band count; version `v` holds the first `v` successfully processed snapshots.
    pub fn version(&self) -> usize {
        self.layout.len()
    }
}

#[derive(Debug, Default)]
pub struct MetricsVersion {
    pub series: MetricSeries,
    pub json: Vec<u8>,
    pub csv: String,
}

impl MetricsVersion {
    fn new(series: MetricSeries) -> Self {
        Self {
            json: series.to_json_bytes(),
            csv: series.to_csv(),
            series,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Idle,
    Embedding,
    Error,
}

#[derive(Debug, Clone)]
struct StatusInfo {
    status: RunStatus,
    error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub status: RunStatus,
    #[serde(default)]
    pub error: Option<String>,
    pub layout_version: usize,
    pub metric_entries: usize,
    pub control: ControlState,
    pub last_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
}

/// Label equality conjunction, e.g. `origin:generated,group:g2`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelFilter {
    pub terms: Vec<(String, String)>,
}

impl LabelFilter {
    pub fn parse(text: &str) -> Result<Self, ServiceError> {
        let mut terms = Vec::new();
        for part in text.split(',').filter(|p| !p.is_empty()) {
            let (col, val) = part.split_once(':').ok_or_else(|| {
                ServiceError::Invalid(format!("filter term `{part}` is not of the form column:value"))
            })?;
            if col.is_empty() {
                return Err(ServiceError::Invalid(format!("filter term `{part}` has no column")));
            }
            terms.push((col.to_string(), val.to_string()));
        }
        Ok(Self { terms })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSlice {
    pub run_id: String,
    pub layout_version: usize,
    pub config_hash: Option<String>,
    pub frozen_upto: Option<usize>,
    /// Bands `from..=to`. Point coordinates are the stored ones; filtering
    /// only removes points.
    pub bands: Vec<BandDocument>,
}

/// Shared state of one monitored run.
pub struct Run {
    id: String,
    dir: PathBuf,
    manifest: RunManifest,
    config: EmbeddingConfig,
    metric_options: MetricOptions,
    layout: ArcSwapOption<LayoutVersion>,
    metrics: ArcSwap<MetricsVersion>,
    status: ArcSwap<StatusInfo>,
    // Control changes and event appends share one lock so that the event
    // order matches the order of control revisions.
    journal: Mutex<Journal>,
    seq: watch::Sender<u64>,
}

struct Journal {
    events: EventLog,
    control: ControlState,
}

impl Run {
    pub(crate) fn new(dir: PathBuf, manifest: RunManifest, control: ControlState) -> Self {
        // Snapshots arrive one at a time, so only progressive mode applies.
        let config = EmbeddingConfig {
            mode: EmbeddingMode::Progressive,
            ..manifest.embedding.clone()
        };
        Self {
            id: manifest.run_id.clone(),
            dir,
            metric_options: MetricOptions::for_manifest(&manifest),
            config,
            manifest,
            layout: ArcSwapOption::empty(),
            metrics: ArcSwap::from_pointee(MetricsVersion::new(MetricSeries::default())),
            status: ArcSwap::from_pointee(StatusInfo {
                status: RunStatus::Idle,
                error: None,
            }),
            journal: Mutex::new(Journal {
                events: EventLog::default(),
                control,
            }),
            seq: watch::channel(0).0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Embedding config actually used (the manifest's, in progressive mode).
    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn layout(&self) -> Option<Arc<LayoutVersion>> {
        self.layout.load_full()
    }

    pub fn metrics(&self) -> Arc<MetricsVersion> {
        self.metrics.load_full()
    }

    pub fn status(&self) -> (RunStatus, Option<String>) {
        let s = self.status.load();
        (s.status, s.error.clone())
    }

    pub fn control(&self) -> ControlState {
        self.journal.lock().control.clone()
    }

    pub fn last_seq(&self) -> u64 {
        self.journal.lock().events.last_seq()
    }

    pub fn events_after(&self, after: u64) -> EventBatch {
        let j = self.journal.lock();
        EventBatch {
            events: j.events.after(after),
            last_seq: j.events.last_seq(),
        }
    }

    /// Receiver whose value is the latest sequence number.
    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.seq.subscribe()
    }

    pub fn summary(&self, with_manifest: bool) -> RunSummary {
        let (status, error) = self.status();
        let (control, last_seq) = {
            let j = self.journal.lock();
            (j.control.clone(), j.events.last_seq())
        };
        RunSummary {
            run_id: self.id.clone(),
            status,
            error,
            layout_version: self.layout().map_or(0, |v| v.version()),
            metric_entries: self.metrics().series.len(),
            control,
            last_seq,
            manifest: with_manifest.then(|| self.manifest.clone()),
        }
    }

    /// Writes the next control revision to disk and records `control_changed`.
    pub fn set_control(&self, desired: DesiredState, note: &str) -> Result<ControlState, ServiceError> {
        let mut j = self.journal.lock();
        let next = j.control.next(desired, note);
        write_control(&self.dir, &next).map_err(|e| ServiceError::Internal(e.to_string()))?;
        j.control = next.clone();
        let seq = j.events.append(
            EventKind::ControlChanged,
            EventPayload {
                control: Some(next.clone()),
                ..Default::default()
            },
        );
        drop(j);
        self.seq.send_replace(seq);
        log::info!("run {}: control -> {} (revision {})", self.id, next.desired_state, next.revision);
        Ok(next)
    }

    /// Bands `from..=to` (defaults: all), keeping points that match `filter`.
    pub fn query_layout(
        &self,
        from: Option<usize>,
        to: Option<usize>,
        filter: &LabelFilter,
    ) -> Result<LayoutSlice, ServiceError> {
        for (col, _) in &filter.terms {
            if !self.manifest.label_columns.iter().any(|c| c == col) {
                return Err(ServiceError::Invalid(format!(
                    "unknown filter column `{col}`; the run declares {:?}",
                    self.manifest.label_columns
                )));
            }
        }
        let current = self.layout();
        let n = current.as_ref().map_or(0, |v| v.version());
        if n == 0 && from.is_none() && to.is_none() {
            return Ok(LayoutSlice {
                run_id: self.id.clone(),
                layout_version: 0,
                config_hash: None,
                frozen_upto: None,
                bands: Vec::new(),
            });
        }
        let from = from.unwrap_or(0);
        let to = to.unwrap_or(n.saturating_sub(1));
        if from > to || to >= n {
            return Err(ServiceError::NotFound(format!(
                "band range {from}..={to} is outside the {n} published bands"
            )));
        }
        let v = current.expect("n > 0");
        let bands = (from..=to)
            .map(|k| {
                let mut doc = BandDocument::from_band(&v.layout.bands[k]);
                if !filter.terms.is_empty() {
                    let labels = &v.labels[k];
                    let keep: Vec<bool> = (0..labels.rows.len())
                        .map(|i| {
                            filter
                                .terms
                                .iter()
                                .all(|(c, val)| labels.value(i, c) == Some(val.as_str()))
                        })
                        .collect();
                    let mut i = 0;
                    doc.points.retain(|_| {
                        i += 1;
                        keep[i - 1]
                    });
                }
                doc
            })
            .collect();
        Ok(LayoutSlice {
            run_id: self.id.clone(),
            layout_version: v.version(),
            config_hash: Some(v.layout.config_hash.clone()),
            frozen_upto: v.layout.frozen_upto,
            bands,
        })
    }

    fn emit(&self, kind: EventKind, payload: EventPayload) {
        let seq = self.journal.lock().events.append(kind, payload);
        self.seq.send_replace(seq);
    }

    fn set_status(&self, status: RunStatus, error: Option<String>) {
        self.status.store(Arc::new(StatusInfo { status, error }));
    }

    fn fail(&self, iteration: Option<u64>, message: String) {
        log::error!("run {}: {message}", self.id);
        self.set_status(RunStatus::Error, Some(message.clone()));
        self.emit(
            EventKind::IngestError,
            EventPayload {
                training_iteration: iteration,
                message: Some(message),
                ..Default::default()
            },
        );
    }

    fn reject(&self, report: ValidationReport) {
        log::warn!("run {}: {report}", self.id);
        let name = report
            .dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        self.emit(
            EventKind::IngestError,
            EventPayload {
                training_iteration: report.iteration,
                message: Some(format!("snapshot {name} failed validation")),
                issues: report.issues,
                ..Default::default()
            },
        );
    }

    /// Embeds one validated snapshot and publishes the new layout and metrics.
    /// A failed snapshot leaves the published versions untouched; later
    /// snapshots are appended to the last good layout.
    pub(crate) fn process_snapshot(&self, snapshot: &Snapshot, pool: &ThreadPool) {
        let prev = self.layout();
        let index = prev.as_ref().map_or(0, |v| v.version());
        let iteration = snapshot.training_iteration;
        let at = |extra: EventPayload| EventPayload {
            training_iteration: Some(iteration),
            snapshot_index: Some(index),
            ..extra
        };
        self.emit(EventKind::SnapshotIngested, at(EventPayload::default()));
        self.set_status(RunStatus::Embedding, None);

        let source = self.manifest.primary_source();
        let Some(x) = snapshot.feature(source) else {
            self.fail(Some(iteration), format!("snapshot has no `{source}` features"));
            return;
        };
        let started = std::time::Instant::now();
        let embedded = pool.install(|| match &prev {
            None => embed_first(x, iteration, &self.config),
            Some(v) => append_iteration(&v.layout, x, iteration, &self.config),
        });
        let layout = match embedded {
            Ok(l) => l,
            Err(e) => {
                self.fail(Some(iteration), format!("embedding iteration {iteration} failed: {e}"));
                return;
            }
        };
        log::info!(
            "run {}: band {index} (iteration {iteration}) embedded in {:.2?}",
            self.id,
            started.elapsed()
        );
        let mut labels = prev.as_ref().map(|v| v.labels.clone()).unwrap_or_default();
        labels.push(Arc::new(snapshot.labels.clone()));
        let published = Arc::new(LayoutVersion {
            export: layout.to_json_bytes(),
            layout,
            labels,
        });
        self.layout.store(Some(published.clone()));
        self.emit(
            EventKind::LayoutUpdated,
            at(EventPayload {
                layout_version: Some(published.version()),
                ..Default::default()
            }),
        );

        let band = published.layout.bands.last();
        let entry = pool.install(|| metric_entry(index, snapshot, band, &self.metric_options));
        let mut series = self.metrics().series.clone();
        match entry.and_then(|e| series.push(e)) {
            Ok(()) => {
                let len = series.len();
                self.metrics.store(Arc::new(MetricsVersion::new(series)));
                self.set_status(RunStatus::Idle, None);
                self.emit(
                    EventKind::MetricsUpdated,
                    at(EventPayload {
                        metric_entries: Some(len),
                        ..Default::default()
                    }),
                );
            }
            Err(e) => self.fail(Some(iteration), format!("metrics for iteration {iteration} failed: {e}")),
        }
    }

    fn handle(&self, event: WatchEvent, pool: &ThreadPool) {
        match event {
            WatchEvent::Snapshot(s) => self.process_snapshot(&s, pool),
            WatchEvent::Invalid(report) => self.reject(report),
            WatchEvent::Fatal(message) => self.fail(None, message),
        }
    }
}

/// Snapshot pipeline of one run: polls the directory, processes snapshots
/// serially, and sleeps until the next poll or a wake-up.
pub(crate) fn worker_loop(
    run: Arc<Run>,
    mut watcher: RunWatcher,
    pool: ThreadPool,
    wake: Receiver<()>,
    stop: Arc<AtomicBool>,
    interval: Duration,
) {
    loop {
        if stop.load(Ordering::Acquire) {
            return;
        }
        let events = pool.install(|| watcher.poll());
        for event in events {
            if stop.load(Ordering::Acquire) {
                return;
            }
            run.handle(event, &pool);
        }
        if watcher.is_failed() {
            log::error!("run {}: watcher stopped", run.id);
            return;
        }
        match wake.recv_timeout(interval) {
            Ok(()) | Err(RecvTimeoutError::Timeout) => while wake.try_recv().is_ok() {},
            Err(RecvTimeoutError::Disconnected) => return,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_parsing() {
        let f = LabelFilter::parse("origin:generated,group:g2").unwrap();
        assert_eq!(
            f.terms,
            vec![
                ("origin".to_string(), "generated".to_string()),
                ("group".to_string(), "g2".to_string())
            ]
        );
        assert!(LabelFilter::parse("").unwrap().terms.is_empty());
        assert_eq!(LabelFilter::parse("group:").unwrap().terms[0].1, "");
        assert!(LabelFilter::parse("group").is_err());
        assert!(LabelFilter::parse(":x").is_err());
    }
}
