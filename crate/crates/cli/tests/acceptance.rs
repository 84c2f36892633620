//! Acceptance suite. Runs every criterion at its stated tolerance and runtime
//! limit and prints one PASS/FAIL line per criterion.
//!
//! Set `ACCEPTANCE_ONLY=name1,name2` to run a subset.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use evowatch_core::embedding::{
    affinities, append_iteration, batch_embed, conditional_affinities, embed_first,
    pairwise_sq_dists, read_layout_json, tsne_gradient, AffinityMatrix, EmbeddingConfig,
    EmbeddingMode, EvolutionLayout, LayoutDocument,
};
use evowatch_core::features::FeatureMatrix;
use evowatch_core::ingest::{
    read_control, write_snapshot, DesiredState, Origin, Scenario, Simulation, SimulationParams,
    Snapshot,
};
use evowatch_core::metrics::{
    build_metric_series, cluster_separation, fid, MetricOptions, DEFAULT_OVERLAP_K,
};
use evowatch_core::rng::{normal, rng_for};
use evowatch_service::{EventBatch, EventKind, EventRecord, Monitor, RunSummary, ServiceConfig};
use tempfile::TempDir;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Gradient

fn gaussian_rows(seed: u64, n: usize, d: usize) -> Vec<Vec<f32>> {
    let mut rng = rng_for(seed, 101);
    (0..n)
        .map(|_| (0..d).map(|_| normal(&mut rng) as f32).collect())
        .collect()
}

/// KL(P || Q) with Student-t Q, computed from scratch.
fn kl_oracle(p: &AffinityMatrix, y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let w = |i: usize, j: usize| 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += w(i, j);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij * z / w(i, j)).ln();
            }
        }
    }
    kl
}

fn gradient_finite_differences() -> Outcome {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let instances = 24;
    for seed in 0..instances {
        let n = 10 + (seed as usize * 7) % 21;
        let d = 2 + (seed as usize * 3) % 9;
        let x = FeatureMatrix::from_rows("t", &gaussian_rows(seed, n, d), "p").map_err(|e| e.to_string())?;
        let p = affinities(&x, (n as f64 / 3.0).max(2.0)).map_err(|e| e.to_string())?;
        let mut rng = rng_for(seed, 202);
        let y: Vec<[f64; 2]> = (0..n).map(|_| [normal(&mut rng), normal(&mut rng)]).collect();
        let g = tsne_gradient(&p, &y).map_err(|e| e.to_string())?;
        for i in 0..n {
            for c in 0..2 {
                let mut plus = y.clone();
                let mut minus = y.clone();
                plus[i][c] += h;
                minus[i][c] -= h;
                let fd = (kl_oracle(&p, &plus) - kl_oracle(&p, &minus)) / (2.0 * h);
                let rel = (g[i][c] - fd).abs() / g[i][c].abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    check(worst < 1e-4, || format!("max relative error {worst:.3e} >= 1e-4"))?;
    Ok(format!("{instances} instances, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Affinities

fn affinity_suite() -> Outcome {
    let mut worst_mass: f64 = 0.0;
    let mut worst_perp: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    for (seed, perplexity) in [(1u64, 5.0), (2, 30.0), (3, 50.0)] {
        let n = 200;
        let x = FeatureMatrix::from_rows("t", &gaussian_rows(seed, n, 10), "p").map_err(|e| e.to_string())?;
        let d = pairwise_sq_dists(&x).map_err(|e| e.to_string())?;
        let cond = conditional_affinities(&d, perplexity).map_err(|e| e.to_string())?;
        for i in 0..n {
            check(cond.p.get(i, i) == 0.0, || format!("perplexity {perplexity}: conditional row {i} has diagonal mass"))?;
            let row: Vec<f64> = (0..n).map(|j| cond.p.get(i, j)).collect();
            let entropy_bits: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.log2()).sum();
            worst_perp = worst_perp.max((entropy_bits - perplexity.log2()).abs());
            let sum: f64 = row.iter().sum();
            check((sum - 1.0).abs() <= 1e-9, || format!("perplexity {perplexity}: row {i} sums to {sum}"))?;
        }
        let p = affinities(&x, perplexity).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        for i in 0..n {
            check(p.p.get(i, i) == 0.0, || format!("perplexity {perplexity}: P has diagonal mass at {i}"))?;
            for j in 0..n {
                let v = p.p.get(i, j);
                check(v >= 0.0, || format!("negative affinity at ({i},{j})"))?;
                worst_sym = worst_sym.max((v - p.p.get(j, i)).abs());
                total += v;
            }
        }
        worst_mass = worst_mass.max((total - 1.0).abs());
    }
    check(worst_sym <= 1e-12, || format!("asymmetry {worst_sym:e}"))?;
    check(worst_mass <= 1e-9, || format!("total mass off by {worst_mass:e}"))?;
    check(worst_perp <= 1e-4, || format!("perplexity off by {worst_perp:e} (log2)"))?;
    Ok(format!(
        "perplexities 5/30/50, N=200: |mass-1| {worst_mass:.1e}, max |log2 perp error| {worst_perp:.1e}, asymmetry {worst_sym:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// FID

fn sample(seed: u64, n: usize, mean: &[f64], sd: &[f64], prefix: &str) -> FeatureMatrix {
    let mut rng = rng_for(seed, 303);
    let rows: Vec<Vec<f32>> = (0..n)
        .map(|_| mean.iter().zip(sd).map(|(m, s)| (m + s * normal(&mut rng)) as f32).collect())
        .collect();
    FeatureMatrix::from_rows("clip", &rows, prefix).unwrap()
}

fn column(values: &[f32], prefix: &str) -> FeatureMatrix {
    let rows: Vec<Vec<f32>> = values.iter().map(|v| vec![*v]).collect();
    FeatureMatrix::from_rows("t", &rows, prefix).unwrap()
}

fn fid_closed_form() -> Outcome {
    let a = sample(9, 300, &[0.0; 5], &[1.0, 2.0, 0.5, 1.0, 3.0], "a");
    let same = fid(&a, &a).map_err(|e| e.to_string())?;
    check(same <= 1e-9, || format!("identical sets gave {same:e}"))?;

    let shift = fid(&column(&[-1.0, 0.0, 1.0], "r"), &column(&[2.0, 3.0, 4.0], "g")).map_err(|e| e.to_string())?;
    check((shift - 9.0).abs() <= 1e-6, || format!("mean-shift fixture gave {shift}"))?;

    let var = fid(&column(&[-2.0, 0.0, 2.0], "r"), &column(&[-1.0, 0.0, 1.0], "g")).map_err(|e| e.to_string())?;
    check((var - 1.0).abs() <= 1e-6, || format!("variance fixture gave {var}"))?;

    let var_r = [1.0, 2.0, 3.0, 4.0, 5.0];
    let var_g = [4.0, 2.0, 1.0, 4.0, 9.0];
    let mu_g = [1.0, 1.0, 0.0, 0.0, 0.0];
    let real = sample(1, 5000, &[0.0; 5], &var_r.map(f64::sqrt), "r");
    let gen = sample(2, 5000, &mu_g, &var_g.map(f64::sqrt), "g");
    // Diagonal covariances commute, so the trace term is sum (sqrt a - sqrt b)^2.
    let closed: f64 = mu_g.iter().map(|m| m * m).sum::<f64>()
        + var_r.iter().zip(&var_g).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>();
    let sampled = fid(&real, &gen).map_err(|e| e.to_string())?;
    let rel = (sampled - closed).abs() / closed;
    check(rel <= 0.05, || format!("sampled 5-D FID {sampled} vs closed form {closed}"))?;
    Ok(format!(
        "identical {same:.1e}, shift {shift:.9}, variance {var:.9}, sampled {sampled:.4} vs {closed:.4} ({:.2}%)",
        100.0 * rel
    ))
}

// ---------------------------------------------------------------------------
// Split scenario

fn silhouette_oracle(pts: &[(f64, f64)], labels: &[usize]) -> f64 {
    let dist = |a: (f64, f64), b: (f64, f64)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..pts.len() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..pts.len() {
            if i != j {
                sums[labels[j]] += dist(pts[i], pts[j]);
                counts[labels[j]] += 1;
            }
        }
        if counts[labels[i]] == 0 {
            continue;
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / pts.len() as f64
}

fn band_separations(layout: &EvolutionLayout, groups: &HashMap<String, String>) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for band in &layout.bands {
        let lib = cluster_separation(band, groups).map_err(|e| e.to_string())?;
        let mut names: Vec<&String> = groups.values().collect();
        names.sort();
        names.dedup();
        let pts: Vec<(f64, f64)> = band.points.iter().map(|p| (p.x, p.y)).collect();
        let labels: Vec<usize> = band
            .points
            .iter()
            .map(|p| names.iter().position(|n| **n == groups[&p.instance_id]).unwrap())
            .collect();
        let oracle = silhouette_oracle(&pts, &labels);
        check((lib - oracle).abs() <= 1e-9, || {
            format!("band {}: library separation {lib} vs oracle {oracle}", band.index)
        })?;
        out.push(oracle);
    }
    Ok(out)
}

fn split_snapshots() -> (SimulationParams, Vec<Snapshot>) {
    let params = SimulationParams::new(Scenario::Split, 6, 150, 10, 0);
    let sim = Simulation::new(params.clone()).unwrap();
    let snaps = (0..6).map(|t| sim.snapshot(t)).collect();
    (params, snaps)
}

fn split_scenario(mode: EmbeddingMode) -> Outcome {
    let (params, snaps) = split_snapshots();
    let config = EmbeddingConfig {
        mode,
        ..params.embedding.clone()
    };
    let inputs: Vec<(u64, &FeatureMatrix)> = snaps
        .iter()
        .map(|s| (s.training_iteration, s.feature("clip").unwrap()))
        .collect();
    let layout = match mode {
        EmbeddingMode::Batch => batch_embed(&inputs, &config),
        EmbeddingMode::Progressive => {
            let mut l = embed_first(inputs[0].1, inputs[0].0, &config);
            for &(it, x) in &inputs[1..] {
                l = l.and_then(|l| append_iteration(&l, x, it, &config));
            }
            l
        }
    }
    .map_err(|e| e.to_string())?;
    let groups = snaps[0].labels.column_map("group");
    let sep = band_separations(&layout, &groups)?;
    let last = *sep.last().unwrap();
    let shown: Vec<String> = sep.iter().map(|v| format!("{v:.3}")).collect();
    let detail = format!("separation per band [{}]", shown.join(", "));
    check(last > 0.5, || format!("final band {last:.3} <= 0.5; {detail}"))?;
    check(sep[0] < 0.2, || format!("band 0 {:.3} >= 0.2; {detail}", sep[0]))?;
    check(sep.iter().all(|&v| v <= last), || format!("final band is not the maximum; {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Bias scenario

/// Mean fraction of the k nearest real neighbours (all groups) of each
/// generated instance of `group` that belong to `group`.
fn overlap_oracle(snap: &Snapshot, group: &str, k: usize) -> f64 {
    let x = snap.feature("clip").unwrap();
    let rows = &snap.labels.rows;
    let group_of = |i: usize| snap.labels.value(i, "group").unwrap();
    let real: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].origin == Origin::Real).collect();
    let gen: Vec<usize> = (0..rows.len())
        .filter(|&i| rows[i].origin == Origin::Generated && group_of(i) == group)
        .collect();
    let dist = |a: usize, b: usize| -> f64 {
        x.row(a).iter().zip(x.row(b)).map(|(u, v)| (*u as f64 - *v as f64).powi(2)).sum()
    };
    let mut total = 0.0;
    for &g in &gen {
        let mut d: Vec<(f64, usize)> = real.iter().map(|&r| (dist(g, r), r)).collect();
        d.sort_by(|a, b| a.partial_cmp(b).unwrap());
        total += d[..k].iter().filter(|(_, r)| group_of(*r) == group).count() as f64 / k as f64;
    }
    total / gen.len() as f64
}

fn bias_scenario() -> Outcome {
    let params = SimulationParams::new(Scenario::Bias, 5, 200, 10, 0);
    let sim = Simulation::new(params).unwrap();
    let manifest = sim.manifest("2026-01-01T00:00:00Z".into());
    let snaps: Vec<Snapshot> = (0..5).map(|t| sim.snapshot(t)).collect();
    let opts = MetricOptions::for_manifest(&manifest);
    let series = build_metric_series(&snaps, None, &opts).map_err(|e| e.to_string())?;
    let first = &series.entries[0];
    let last = &series.entries[4];
    let mut parts = Vec::new();
    for g in first.groups.keys() {
        let a = first.groups[g].overlap.ok_or_else(|| format!("{g}: no overlap at the first snapshot"))?;
        let b = last.groups[g].overlap.ok_or_else(|| format!("{g}: no overlap at the last snapshot"))?;
        for (t, v) in [(0, a), (4, b)] {
            let o = overlap_oracle(&snaps[t], g, DEFAULT_OVERLAP_K);
            check((o - v).abs() <= 1e-12, || format!("{g} snapshot {t}: library {v} vs oracle {o}"))?;
        }
        parts.push(format!("{g} {a:.3}->{b:.3}"));
        if g == "g3" {
            check(b < 0.5 * a, || format!("drifting group {g}: {a:.3} -> {b:.3}, not below half"))?;
        } else {
            check(b >= 0.8 * a, || format!("stable group {g}: {a:.3} -> {b:.3}, below 0.8x"))?;
        }
    }
    Ok(format!("overlap (drifting g3) {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------
// Service helpers

struct Service {
    monitor: Arc<Monitor>,
    base: String,
    http: reqwest::Client,
}

impl Service {
    async fn start(root: &Path) -> Service {
        let mut config = ServiceConfig::new(root);
        config.poll_interval = Duration::from_millis(20);
        let monitor = Monitor::open(config).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(evowatch_service::serve(listener, monitor.clone(), std::future::pending()));
        Service {
            monitor,
            base,
            http: reqwest::Client::new(),
        }
    }

    async fn get_bytes(&self, path: &str) -> Result<Vec<u8>, String> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await.map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("GET {path}: {}", resp.status()));
        }
        Ok(resp.bytes().await.map_err(|e| e.to_string())?.to_vec())
    }

    async fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, String> {
        serde_json::from_slice(&self.get_bytes(path).await?).map_err(|e| format!("GET {path}: {e}"))
    }

    async fn post(&self, path: &str, body: Vec<u8>) -> Result<Vec<u8>, String> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .body(body)
            .send()
            .await
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| e.to_string())?.to_vec();
        if !status.is_success() {
            return Err(format!("POST {path}: {status} {}", String::from_utf8_lossy(&bytes)));
        }
        Ok(bytes)
    }

    /// Long-polls until `count` metrics_updated events exist; fails on ingest errors.
    async fn wait_metrics(&self, run: &str, count: usize, limit: Duration) -> Result<Vec<EventRecord>, String> {
        let deadline = Instant::now() + limit;
        let mut all: Vec<EventRecord> = Vec::new();
        loop {
            if let Some(e) = all.iter().find(|e| e.kind == EventKind::IngestError) {
                return Err(format!("ingest error: {:?}", e.payload.message));
            }
            if all.iter().filter(|e| e.kind == EventKind::MetricsUpdated).count() >= count {
                return Ok(all);
            }
            if Instant::now() > deadline {
                return Err(format!("timed out waiting for {count} processed snapshots"));
            }
            let after = all.last().map_or(0, |e| e.seq);
            let batch: EventBatch = self
                .get_json(&format!("/runs/{run}/events?after={after}&timeout_ms=1000"))
                .await?;
            all.extend(batch.events);
        }
    }

    fn stop(self) {
        self.monitor.join();
    }
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap()
}

// ---------------------------------------------------------------------------
// Determinism and frozen prefix

/// Parses an export and checks that re-serializing it reproduces the bytes,
/// so per-band serializations are exactly the bytes inside the export.
fn parse_export(bytes: &[u8]) -> Result<LayoutDocument, String> {
    let doc = read_layout_json(bytes).map_err(|e| e.to_string())?;
    let mut again = serde_json::to_vec(&doc).unwrap();
    again.push(b'\n');
    check(again == bytes, || "layout export does not re-serialize byte-identically".into())?;
    Ok(doc)
}

fn service_determinism() -> Outcome {
    let (params, snaps) = split_snapshots();
    let sim = Simulation::new(params).unwrap();
    let manifest = sim.manifest("2026-01-01T00:00:00Z".into());
    let root = TempDir::new().unwrap();
    let run_dir = root.path().join(&manifest.run_id);
    let id = manifest.run_id.clone();
    runtime().block_on(async {
        // First pass: snapshots land one at a time while the service runs.
        let svc = Service::start(root.path()).await;
        svc.post("/runs", serde_json::to_vec(&manifest).unwrap()).await?;
        let mut exports = Vec::new();
        for (k, snap) in snaps.iter().enumerate() {
            write_snapshot(&run_dir, snap).map_err(|e| e.to_string())?;
            svc.post(&format!("/runs/{id}/snapshots/notify"), Vec::new()).await?;
            svc.wait_metrics(&id, k + 1, Duration::from_secs(60)).await?;
            exports.push(svc.get_bytes(&format!("/runs/{id}/layout.json")).await?);
        }
        let reread = svc.get_bytes(&format!("/runs/{id}/layout.json")).await?;
        check(reread == exports[5], || "two reads of the same version differ".into())?;
        svc.stop();

        let docs: Vec<LayoutDocument> = exports.iter().map(|b| parse_export(b)).collect::<Result<_, _>>()?;
        for k in 1..docs.len() {
            check(docs[k].bands.len() == k + 1, || format!("version {} has {} bands", k + 1, docs[k].bands.len()))?;
            for j in 0..k {
                check(
                    docs[k].bands[j].to_json_bytes() == docs[k - 1].bands[j].to_json_bytes(),
                    || format!("appending band {k} changed band {j}"),
                )?;
            }
        }

        // Second pass: a fresh service over the same, now complete directory.
        let svc = Service::start(root.path()).await;
        svc.wait_metrics(&id, 6, Duration::from_secs(60)).await?;
        let second = svc.get_bytes(&format!("/runs/{id}/layout.json")).await?;
        svc.stop();
        check(second == exports[5], || "second service run produced a different export".into())?;
        Ok(format!(
            "2 service runs, 6 versions, {} export bytes identical, all prefixes frozen",
            second.len()
        ))
    })
}

// ---------------------------------------------------------------------------
// Scale

fn scale_append() -> Outcome {
    let params = SimulationParams::new(Scenario::Bias, 2, 2000, 512, 0);
    let sim = Simulation::new(params.clone()).unwrap();
    let s0 = sim.snapshot(0);
    let s1 = sim.snapshot(1);
    let config = params.embedding.clone();
    let t0 = Instant::now();
    let first = embed_first(s0.feature("clip").unwrap(), s0.training_iteration, &config).map_err(|e| e.to_string())?;
    let first_secs = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let layout = append_iteration(&first, s1.feature("clip").unwrap(), s1.training_iteration, &config)
        .map_err(|e| e.to_string())?;
    let append = t1.elapsed();
    check(layout.len() == 2 && layout.bands[1].points.len() == 2000, || "unexpected layout shape".into())?;
    check(append < Duration::from_secs(300), || format!("append took {:.1}s", append.as_secs_f64()))?;
    Ok(format!(
        "append {:.1}s (limit 300s); first band {first_secs:.1}s untimed; {} threads",
        append.as_secs_f64(),
        rayon_threads()
    ))
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------------------
// Control loop with a stub trainer

struct Trainer {
    stop: Arc<AtomicBool>,
    emitted: Arc<Mutex<Vec<u64>>>,
    paused_polls: Arc<AtomicUsize>,
    handle: std::thread::JoinHandle<()>,
}

const BATCH: Duration = Duration::from_millis(10);
const CADENCE_BATCHES: u64 = 5;

/// Fake training loop: one batch per `BATCH`, reads control.json before each
/// batch and writes a snapshot every `CADENCE_BATCHES` completed batches.
fn start_trainer(sim: Arc<Simulation>, run_dir: std::path::PathBuf, max_snapshots: usize) -> Trainer {
    let stop = Arc::new(AtomicBool::new(false));
    let emitted = Arc::new(Mutex::new(Vec::new()));
    let paused_polls = Arc::new(AtomicUsize::new(0));
    let handle = std::thread::spawn({
        let (stop, emitted, paused_polls) = (stop.clone(), emitted.clone(), paused_polls.clone());
        move || {
            let emit = |t: usize| {
                let snap = sim.snapshot(t);
                write_snapshot(&run_dir, &snap).unwrap();
                emitted.lock().unwrap().push(snap.training_iteration);
            };
            emit(0);
            let mut batch = 0u64;
            while !stop.load(Ordering::Acquire) {
                let control = read_control(&run_dir).unwrap().unwrap_or_default();
                if control.desired_state == DesiredState::Paused {
                    paused_polls.fetch_add(1, Ordering::Relaxed);
                    std::thread::sleep(BATCH);
                    continue;
                }
                std::thread::sleep(BATCH);
                batch += 1;
                if batch % CADENCE_BATCHES == 0 {
                    let t = (batch / CADENCE_BATCHES) as usize;
                    if t >= max_snapshots {
                        return;
                    }
                    emit(t);
                }
            }
        }
    });
    Trainer {
        stop,
        emitted,
        paused_polls,
        handle,
    }
}

fn control_loop() -> Outcome {
    let mut params = SimulationParams::new(Scenario::Bias, 12, 40, 8, 5);
    params.cadence = CADENCE_BATCHES;
    params.thumbnails = false;
    params.embedding.steps = 250;
    params.embedding.early_exaggeration_steps = 60;
    params.embedding.momentum_switch_step = 60;
    let sim = Arc::new(Simulation::new(params).unwrap());
    let manifest = sim.manifest("2026-01-01T00:00:00Z".into());
    let id = manifest.run_id.clone();
    let root = TempDir::new().unwrap();
    let run_dir = root.path().join(&id);
    let cadence = BATCH * CADENCE_BATCHES as u32;

    runtime().block_on(async {
        let svc = Service::start(root.path()).await;
        svc.post("/runs", serde_json::to_vec(&manifest).unwrap()).await?;
        let trainer = start_trainer(sim.clone(), run_dir.clone(), 12);
        let count = || trainer.emitted.lock().unwrap().len();

        let deadline = Instant::now() + Duration::from_secs(10);
        while count() < 3 {
            check(Instant::now() < deadline, || "trainer never reached 3 snapshots".into())?;
            tokio::time::sleep(BATCH).await;
        }
        svc.post(&format!("/runs/{id}/control"), br#"{"desired_state":"paused","note":"drift"}"#.to_vec())
            .await?;
        let at_pause = count();
        let on_disk = read_control(&run_dir).map_err(|e| e.to_string())?.unwrap();
        check(
            on_disk.desired_state == DesiredState::Paused && on_disk.revision == 1,
            || format!("control.json after pause: {on_disk:?}"),
        )?;
        tokio::time::sleep(cadence * 4).await;
        let settled = count();
        check(settled <= at_pause + 1, || {
            format!("{} snapshots emitted after pause (allowed 1)", settled - at_pause)
        })?;
        tokio::time::sleep(cadence * 4).await;
        check(count() == settled, || "trainer kept emitting while paused".into())?;
        check(trainer.paused_polls.load(Ordering::Relaxed) > 0, || "trainer never observed the pause".into())?;

        svc.post(&format!("/runs/{id}/control"), br#"{"desired_state":"running","note":""}"#.to_vec())
            .await?;
        let deadline = Instant::now() + Duration::from_secs(10);
        while count() < settled + 2 {
            check(Instant::now() < deadline, || "trainer did not resume".into())?;
            tokio::time::sleep(BATCH).await;
        }
        trainer.stop.store(true, Ordering::Release);
        trainer.handle.join().map_err(|_| "trainer panicked".to_string())?;
        let emitted = trainer.emitted.lock().unwrap().clone();

        let events = svc.wait_metrics(&id, emitted.len(), Duration::from_secs(20)).await?;
        let batch: EventBatch = svc.get_json(&format!("/runs/{id}/events?after=0")).await?;
        check(batch.events.len() >= events.len(), || "event log shrank".into())?;
        let events = batch.events;
        for (i, e) in events.iter().enumerate() {
            check(e.seq == i as u64 + 1, || format!("event {i} has seq {}", e.seq))?;
        }
        check(batch.last_seq == events.len() as u64, || "last_seq does not match the log".into())?;

        let controls: Vec<(DesiredState, u64)> = events
            .iter()
            .filter(|e| e.kind == EventKind::ControlChanged)
            .map(|e| {
                let c = e.payload.control.as_ref().unwrap();
                (c.desired_state, c.revision)
            })
            .collect();
        check(
            controls == vec![(DesiredState::Paused, 1), (DesiredState::Running, 2)],
            || format!("control events {controls:?}"),
        )?;
        let data: Vec<&EventRecord> = events.iter().filter(|e| e.kind != EventKind::ControlChanged).collect();
        check(data.len() == 3 * emitted.len(), || {
            format!("{} data events for {} snapshots", data.len(), emitted.len())
        })?;
        for (k, chunk) in data.chunks(3).enumerate() {
            let kinds: Vec<EventKind> = chunk.iter().map(|e| e.kind).collect();
            check(
                kinds == [EventKind::SnapshotIngested, EventKind::LayoutUpdated, EventKind::MetricsUpdated],
                || format!("snapshot {k}: events {kinds:?}"),
            )?;
            check(
                chunk.iter().all(|e| e.payload.training_iteration == Some(emitted[k])),
                || format!("snapshot {k}: events for the wrong iteration"),
            )?;
        }

        // Replaying the log gives the current state.
        let summary: RunSummary = svc.get_json(&format!("/runs/{id}")).await?;
        let replayed_version = data.iter().rev().find_map(|e| e.payload.layout_version).unwrap_or(0);
        check(summary.layout_version == replayed_version, || "layout version differs from the log".into())?;
        check(summary.control.revision == 2 && summary.control.desired_state == DesiredState::Running, || {
            format!("final control {:?}", summary.control)
        })?;
        svc.stop();
        Ok(format!(
            "{} snapshots, {} emitted after pause, {} events gap-free",
            emitted.len(),
            settled - at_pause,
            events.len()
        ))
    })
}

// ---------------------------------------------------------------------------

struct Criterion {
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { name: "gradient_finite_differences", limit: Duration::from_secs(10), run: gradient_finite_differences },
        Criterion { name: "affinity_suite", limit: Duration::from_secs(5), run: affinity_suite },
        Criterion { name: "fid_closed_form", limit: Duration::from_secs(5), run: fid_closed_form },
        Criterion { name: "split_scenario_batch", limit: Duration::from_secs(60), run: || split_scenario(EmbeddingMode::Batch) },
        Criterion { name: "split_scenario_progressive", limit: Duration::from_secs(60), run: || split_scenario(EmbeddingMode::Progressive) },
        Criterion { name: "bias_scenario_overlap", limit: Duration::from_secs(60), run: bias_scenario },
        Criterion { name: "service_determinism_frozen_prefix", limit: Duration::from_secs(90), run: service_determinism },
        Criterion { name: "scale_append_2000x512", limit: Duration::from_secs(600), run: scale_append },
        Criterion { name: "control_loop_stub_trainer", limit: Duration::from_secs(30), run: control_loop },
    ];
    let only: Option<Vec<String>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').map(str::to_string).collect());
    // Keep panics from criteria on one line in the report.
    std::panic::set_hook(Box::new(|_| {}));

    let mut failed = 0;
    let mut ran = 0;
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|n| n == c.name)) {
            continue;
        }
        ran += 1;
        let started = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(c.run)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .map_or("panicked".into(), |m| format!("panicked: {m}"))),
        };
        let elapsed = started.elapsed();
        let outcome = outcome.and_then(|d| {
            if elapsed <= c.limit {
                Ok(d)
            } else {
                Err(format!("took {:.1}s, limit {}s; {d}", elapsed.as_secs_f64(), c.limit.as_secs()))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS {} ({:.1}s): {detail}", c.name, elapsed.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {} ({:.1}s): {why}", c.name, elapsed.as_secs_f64());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
