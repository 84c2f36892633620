//! Monitor service: owns the runs under a data root, drives progressive
//! embedding and metrics as snapshots land, and serves the results over HTTP.
//!
//! Each run gets one worker thread that processes snapshots strictly in
//! order. Layouts and metric series are published as immutable versions;
//! readers never block the worker.

mod events;
mod http;
mod run;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use evowatch_core::ingest::{
    read_control, read_manifest, write_control, write_manifest, ControlState, RunManifest,
    RunWatcher, MANIFEST_FILE,
};
use parking_lot::{Mutex, RwLock};
use thiserror::Error;
use tokio::sync::watch;

pub use events::{EventBatch, EventKind, EventPayload, EventRecord};
pub use http::{router, serve, MAX_POLL_TIMEOUT_MS};
pub use run::{LabelFilter, LayoutSlice, LayoutVersion, MetricsVersion, Run, RunStatus, RunSummary};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Internal(String),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Directory holding one subdirectory per run.
    pub data_root: PathBuf,
    /// Threads available to each run's embedding worker.
    pub workers_per_run: usize,
    /// How often run directories are rescanned without a notify.
    pub poll_interval: Duration,
}

impl ServiceConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            workers_per_run: std::thread::available_parallelism().map_or(1, |n| n.get()),
            poll_interval: Duration::from_millis(500),
        }
    }
}

struct RunEntry {
    run: Arc<Run>,
    wake: Mutex<Sender<()>>,
    stop: Arc<AtomicBool>,
    thread: Mutex<Option<JoinHandle<()>>>,
}

/// Registry of runs under one data root.
pub struct Monitor {
    config: ServiceConfig,
    runs: RwLock<BTreeMap<String, Arc<RunEntry>>>,
    rejected: Mutex<HashSet<PathBuf>>,
    shutdown: watch::Sender<bool>,
}

impl Monitor {
    /// Opens the data root and starts a worker for every run directory in it.
    /// The root is rescanned every poll interval, so run directories created
    /// later (for example by the simulator) are picked up too.
    pub fn open(config: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        if !config.data_root.is_dir() {
            return Err(ServiceError::Invalid(format!(
                "data root {} is not a directory",
                config.data_root.display()
            )));
        }
        if config.workers_per_run == 0 {
            return Err(ServiceError::Invalid("workers per run must be at least 1".into()));
        }
        let monitor = Arc::new(Self {
            runs: RwLock::new(BTreeMap::new()),
            rejected: Mutex::new(HashSet::new()),
            shutdown: watch::channel(false).0,
            config,
        });
        std::fs::read_dir(&monitor.config.data_root)
            .map_err(|e| ServiceError::Invalid(format!("{}: {e}", monitor.config.data_root.display())))?;
        monitor.discover();
        let weak = Arc::downgrade(&monitor);
        let interval = monitor.config.poll_interval;
        std::thread::Builder::new()
            .name("root-scanner".into())
            .spawn(move || loop {
                std::thread::sleep(interval);
                match weak.upgrade() {
                    Some(m) if !*m.shutdown.borrow() => {
                        m.discover();
                    }
                    _ => return,
                }
            })
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(monitor)
    }

    /// Registers run directories under the data root that are not yet known.
    /// A directory whose manifest cannot be loaded is reported once and then
    /// ignored.
    pub fn discover(&self) -> Vec<Arc<Run>> {
        let Ok(entries) = std::fs::read_dir(&self.config.data_root) else {
            return Vec::new();
        };
        let mut dirs: Vec<PathBuf> = entries
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        dirs.sort();
        let mut found = Vec::new();
        for dir in dirs {
            let Some(name) = dir.file_name().map(|n| n.to_string_lossy().into_owned()) else {
                continue;
            };
            if self.runs.read().contains_key(&name) || self.rejected.lock().contains(&dir) {
                continue;
            }
            match self.register(&dir, &name) {
                Ok(Some(run)) => {
                    log::info!("run {}: loaded from {}", run.id(), dir.display());
                    found.push(run);
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("skipping {}: {e}", dir.display());
                    self.rejected.lock().insert(dir);
                }
            }
        }
        found
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    /// Registers a new run and starts watching its directory.
    ///
    /// The directory `<data_root>/<run_id>` is created with the manifest and
    /// a `running` control file at revision 0. If the directory already holds
    /// an identical manifest (for example, a simulator wrote it), it is
    /// adopted as is.
    pub fn create_run(&self, manifest: RunManifest) -> Result<Arc<Run>, ServiceError> {
        manifest.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let mut runs = self.runs.write();
        if runs.contains_key(&manifest.run_id) {
            return Err(ServiceError::Conflict(format!("run `{}` already exists", manifest.run_id)));
        }
        let dir = self.config.data_root.join(&manifest.run_id);
        if dir.join(MANIFEST_FILE).exists() {
            let existing = read_manifest(&dir).map_err(|e| ServiceError::Conflict(e.to_string()))?;
            if existing != manifest {
                return Err(ServiceError::Conflict(format!(
                    "{} holds a different manifest",
                    dir.display()
                )));
            }
        } else {
            std::fs::create_dir_all(&dir)
                .map_err(|e| ServiceError::Internal(format!("{}: {e}", dir.display())))?;
            write_manifest(&dir, &manifest).map_err(|e| ServiceError::Internal(e.to_string()))?;
        }
        let entry = self.start(&dir)?;
        let run = entry.run.clone();
        runs.insert(run.id().to_string(), entry);
        log::info!("run {}: created", run.id());
        Ok(run)
    }

    fn register(&self, dir: &Path, name: &str) -> Result<Option<Arc<Run>>, ServiceError> {
        let mut runs = self.runs.write();
        if runs.contains_key(name) {
            return Ok(None);
        }
        let entry = self.start(dir)?;
        let run = entry.run.clone();
        runs.insert(run.id().to_string(), entry);
        Ok(Some(run))
    }

    fn start(&self, dir: &Path) -> Result<Arc<RunEntry>, ServiceError> {
        let watcher = RunWatcher::new(dir).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let manifest = watcher.manifest().clone();
        let expected = dir.file_name().map(|n| n.to_string_lossy().into_owned());
        if expected.as_deref() != Some(manifest.run_id.as_str()) {
            return Err(ServiceError::Invalid(format!(
                "run_id `{}` does not match directory {}",
                manifest.run_id,
                dir.display()
            )));
        }
        let control = match read_control(dir).map_err(|e| ServiceError::Invalid(e.to_string()))? {
            Some(c) => c,
            None => {
                let c = ControlState::default();
                write_control(dir, &c).map_err(|e| ServiceError::Internal(e.to_string()))?;
                c
            }
        };
        let run = Arc::new(Run::new(dir.to_path_buf(), manifest, control));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.config.workers_per_run)
            .thread_name({
                let id = run.id().to_string();
                move |i| format!("{id}-embed-{i}")
            })
            .build()
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let thread = std::thread::Builder::new()
            .name(format!("{}-worker", run.id()))
            .spawn({
                let run = run.clone();
                let stop = stop.clone();
                let interval = self.config.poll_interval;
                move || run::worker_loop(run, watcher, pool, rx, stop, interval)
            })
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
        Ok(Arc::new(RunEntry {
            run,
            wake: Mutex::new(tx),
            stop,
            thread: Mutex::new(Some(thread)),
        }))
    }

    pub fn run(&self, id: &str) -> Option<Arc<Run>> {
        self.runs.read().get(id).map(|e| e.run.clone())
    }

    pub fn get(&self, id: &str) -> Result<Arc<Run>, ServiceError> {
        self.run(id)
            .ok_or_else(|| ServiceError::NotFound(format!("no run `{id}`")))
    }

    pub fn runs(&self) -> Vec<Arc<Run>> {
        self.runs.read().values().map(|e| e.run.clone()).collect()
    }

    /// Asks the run's worker to rescan its directory now.
    pub fn notify(&self, id: &str) -> Result<(), ServiceError> {
        let runs = self.runs.read();
        let entry = runs
            .get(id)
            .ok_or_else(|| ServiceError::NotFound(format!("no run `{id}`")))?;
        let _ = entry.wake.lock().send(());
        Ok(())
    }

    /// Receiver that flips to `true` once [`Monitor::shutdown`] is called.
    pub fn shutdown_signal(&self) -> watch::Receiver<bool> {
        self.shutdown.subscribe()
    }

    /// Stops all workers after their current snapshot and releases pending
    /// long-polls. Does not wait for the workers; see [`Monitor::join`].
    pub fn shutdown(&self) {
        self.shutdown.send_replace(true);
        for entry in self.runs.read().values() {
            entry.stop.store(true, Ordering::Release);
            let _ = entry.wake.lock().send(());
        }
    }

    /// Shuts down and waits for every worker thread to exit.
    pub fn join(&self) {
        self.shutdown();
        let entries: Vec<Arc<RunEntry>> = self.runs.read().values().cloned().collect();
        for entry in entries {
            if let Some(t) = entry.thread.lock().take() {
                let _ = t.join();
            }
        }
    }
}
