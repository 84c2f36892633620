use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use rayon::prelude::*;

use super::manifest::{RunManifest, MANIFEST_FILE};
use super::snapshot::{list_snapshot_dirs, Snapshot};
use super::validate::{validate_snapshot, IssueRule, ValidationIssue, ValidationReport};
use super::{io_err, IngestError};

#[derive(Debug, Clone)]
pub enum WatchEvent {
    Snapshot(Box<Snapshot>),
    /// A completed snapshot that failed validation. It is not retried.
    Invalid(ValidationReport),
    /// The manifest changed or became unreadable; the watcher stops.
    Fatal(String),
}

/// Scans a run directory for completed snapshots. Each completed snapshot
/// directory produces exactly one event, in ascending iteration order.
/// Directories without `DONE` are skipped until it appears.
#[derive(Debug)]
pub struct RunWatcher {
    run_dir: PathBuf,
    manifest: RunManifest,
    manifest_bytes: Vec<u8>,
    handled: BTreeSet<u64>,
    last_accepted: Option<u64>,
    failed: bool,
}

impl RunWatcher {
    pub fn new(run_dir: &Path) -> Result<Self, IngestError> {
        let path = run_dir.join(MANIFEST_FILE);
        let manifest_bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let manifest: RunManifest = serde_json::from_slice(&manifest_bytes)
            .map_err(|source| IngestError::Json { path, source })?;
        manifest.validate()?;
        Ok(Self {
            run_dir: run_dir.to_path_buf(),
            manifest,
            manifest_bytes,
            handled: BTreeSet::new(),
            last_accepted: None,
            failed: false,
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn last_accepted(&self) -> Option<u64> {
        self.last_accepted
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    /// One scan. Returns the new events; after a `Fatal` event every later
    /// call returns nothing.
    pub fn poll(&mut self) -> Vec<WatchEvent> {
        if self.failed {
            return Vec::new();
        }
        let path = self.run_dir.join(MANIFEST_FILE);
        match std::fs::read(&path) {
            Ok(b) if b == self.manifest_bytes => {}
            Ok(_) => return self.fail(format!("{} changed while the run was active", path.display())),
            Err(e) => return self.fail(format!("{}: {e}", path.display())),
        }
        let dirs = match list_snapshot_dirs(&self.run_dir) {
            Ok(d) => d,
            Err(e) => return self.fail(e.to_string()),
        };
        let pending: Vec<_> = dirs
            .into_iter()
            .filter(|d| d.complete && !self.handled.contains(&d.iteration))
            .collect();
        let manifest = &self.manifest;
        let results: Vec<_> = pending
            .par_iter()
            .map(|d| validate_snapshot(&d.path, manifest))
            .collect();

        let mut events = Vec::with_capacity(results.len());
        for (d, result) in pending.iter().zip(results) {
            self.handled.insert(d.iteration);
            let event = match result {
                Ok(s) => match self.last_accepted {
                    Some(last) if s.training_iteration <= last => WatchEvent::Invalid(ValidationReport {
                        dir: d.path.clone(),
                        iteration: Some(d.iteration),
                        issues: vec![ValidationIssue {
                            file: String::new(),
                            row: None,
                            rule: IssueRule::Iteration,
                            message: format!(
                                "iteration {} is not after the last accepted iteration {last}",
                                s.training_iteration
                            ),
                        }],
                    }),
                    _ => {
                        self.last_accepted = Some(s.training_iteration);
                        WatchEvent::Snapshot(Box::new(s))
                    }
                },
                Err(report) => WatchEvent::Invalid(report),
            };
            events.push(event);
        }
        events
    }

    fn fail(&mut self, message: String) -> Vec<WatchEvent> {
        self.failed = true;
        vec![WatchEvent::Fatal(message)]
    }
}

/// A background watcher thread. Dropping the handle stops the thread.
#[derive(Debug)]
pub struct WatchHandle {
    events: Receiver<WatchEvent>,
    wake: Sender<()>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl WatchHandle {
    pub fn events(&self) -> &Receiver<WatchEvent> {
        &self.events
    }

    /// Requests an immediate rescan.
    pub fn notify(&self) {
        let _ = self.wake.send(());
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.wake.send(());
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for WatchHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Watches `run_dir`, rescanning every `interval` or on [`WatchHandle::notify`].
/// Snapshots already present are reported by the first scan.
pub fn watch_run(run_dir: &Path, interval: Duration) -> Result<WatchHandle, IngestError> {
    let mut watcher = RunWatcher::new(run_dir)?;
    let (tx, events) = mpsc::channel();
    let (wake, wake_rx) = mpsc::channel::<()>();
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let thread = std::thread::Builder::new()
        .name("evowatch-watch".into())
        .spawn(move || loop {
            if stop_flag.load(Ordering::SeqCst) {
                return;
            }
            for e in watcher.poll() {
                if tx.send(e).is_err() {
                    return;
                }
            }
            if watcher.is_failed() {
                return;
            }
            match wake_rx.recv_timeout(interval) {
                Ok(()) | Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return,
            }
        })
        .map_err(io_err(run_dir))?;
    Ok(WatchHandle {
        events,
        wake,
        stop,
        thread: Some(thread),
    })
}
