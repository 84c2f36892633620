//! Synthetic runs with known ground truth.
//!
//! Groups sit on a circle of radius [`GROUP_RADIUS`] in the first two feature
//! dimensions. Every instance keeps one fixed noise vector for the whole run
//! plus a small per-snapshot jitter; both are recentered per group so group
//! means follow the scenario schedule exactly.
//!
//! - `split`: generated instances only; the classes start on top of each
//!   other and move apart, `sep * (t / (T-1))^SPLIT_POWER` from the origin.
//! - `converge`: each generated group starts [`START_OFFSET`] away from its
//!   real group in a random direction and closes the gap linearly.
//! - `bias`: like `converge`, except the last group moves toward the real
//!   instances of the first group.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use super::control::{write_control, ControlState};
use super::manifest::{write_manifest, RunManifest, SourceSpec, MANIFEST_FILE};
use super::snapshot::{write_snapshot, LabelRow, LabelTable, Origin, Snapshot};
use super::IngestError;
use crate::embedding::EmbeddingConfig;
use crate::features::FeatureMatrix;
use crate::rng::{normal, rng_for, DetRng};

pub const GROUP_RADIUS: f64 = 6.0;
pub const START_OFFSET: f64 = 3.0;
/// Final distance of each class from the origin in `split`.
pub const SPLIT_SEPARATION: f64 = 6.0;
pub const SPLIT_POWER: i32 = 6;
const JITTER: f64 = 0.1;
const THUMB_SIZE: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Split,
    Converge,
    Bias,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Split, Scenario::Converge, Scenario::Bias];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Split => "split",
            Scenario::Converge => "converge",
            Scenario::Bias => "bias",
        }
    }

    pub fn groups(self) -> usize {
        match self {
            Scenario::Split | Scenario::Converge => 3,
            Scenario::Bias => 4,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == s)
            .ok_or_else(|| IngestError::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationParams {
    pub scenario: Scenario,
    /// Number of snapshots, T.
    pub snapshots: usize,
    /// Instances per snapshot, N. Non-split scenarios use half real, half generated.
    pub instances: usize,
    /// Dimension of the primary (`clip`) source, D.
    pub dims: usize,
    pub seed: u64,
    pub cadence: u64,
    pub thumbnails: bool,
    pub embedding: EmbeddingConfig,
    /// Defaults to `sim-<scenario>-<seed>`.
    pub run_id: Option<String>,
    /// Manifest timestamp for [`simulate_run`]; defaults to the current time.
    pub created_at: Option<String>,
}

impl SimulationParams {
    pub fn new(scenario: Scenario, snapshots: usize, instances: usize, dims: usize, seed: u64) -> Self {
        Self {
            scenario,
            snapshots,
            instances,
            dims,
            seed,
            cadence: 5000,
            thumbnails: true,
            embedding: EmbeddingConfig {
                seed,
                ..EmbeddingConfig::default()
            },
            run_id: None,
            created_at: None,
        }
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("sim-{}-{}", self.scenario, self.seed))
    }

    fn validate(&self) -> Result<(), IngestError> {
        let fail = |m: String| Err(IngestError::Simulation(m));
        if self.snapshots < 2 {
            return fail(format!("need at least 2 snapshots, got {}", self.snapshots));
        }
        if self.instances < 30 {
            return fail(format!("need at least 30 instances, got {}", self.instances));
        }
        if self.dims < 2 {
            return fail(format!("need at least 2 dims, got {}", self.dims));
        }
        if self.cadence < 1 {
            return fail("cadence must be at least 1".into());
        }
        Ok(())
    }
}

struct Instance {
    id: String,
    origin: Origin,
    group: usize,
    base: Vec<f64>,
}

/// Deterministic generator for the snapshots of one synthetic run.
pub struct Simulation {
    params: SimulationParams,
    instances: Vec<Instance>,
    /// Per group: unit direction of the group center (first two dims).
    directions: Vec<Vec<f64>>,
    /// Per group: unit direction of the initial generated offset.
    offsets: Vec<Vec<f64>>,
    /// Fixed random projection for the `disc_feat` source, row-major D x D.
    projection: Vec<f64>,
}

impl Simulation {
    pub fn new(params: SimulationParams) -> Result<Self, IngestError> {
        params.validate()?;
        let d = params.dims;
        let g = params.scenario.groups();
        let mut rng = rng_for(params.seed, 0);

        let directions: Vec<Vec<f64>> = (0..g)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / g as f64;
                let mut v = vec![0.0; d];
                v[0] = a.cos();
                v[1] = a.sin();
                v
            })
            .collect();
        let offsets = (0..g).map(|_| unit_vector(&mut rng, d)).collect();
        let projection = (0..d * d).map(|_| normal(&mut rng)).collect();

        let noise_sd = (10.0 / d.max(10) as f64).sqrt();
        let mut noise_rng = rng_for(params.seed, 1);
        let n = params.instances;
        let width = n.to_string().len().max(5);
        let plan: Vec<(String, Origin)> = match params.scenario {
            Scenario::Split => (0..n)
                .map(|i| (format!("inst-{i:0width$}"), Origin::Generated))
                .collect(),
            Scenario::Converge | Scenario::Bias => {
                let real = n.div_ceil(2);
                (0..real)
                    .map(|i| (format!("real-{i:0width$}"), Origin::Real))
                    .chain((0..n - real).map(|i| (format!("gen-{i:0width$}"), Origin::Generated)))
                    .collect()
            }
        };
        let mut counters = [0usize; 2];
        let mut instances: Vec<Instance> = plan
            .into_iter()
            .map(|(id, origin)| {
                let c = &mut counters[(origin == Origin::Generated) as usize];
                let group = *c % g;
                *c += 1;
                let base = (0..d).map(|_| noise_sd * normal(&mut noise_rng)).collect();
                Instance {
                    id,
                    origin,
                    group,
                    base,
                }
            })
            .collect();
        let mut bases: Vec<Vec<f64>> = instances.iter().map(|i| i.base.clone()).collect();
        recenter(&mut bases, &instances);
        for (inst, b) in instances.iter_mut().zip(bases) {
            inst.base = b;
        }

        Ok(Self {
            params,
            instances,
            directions,
            offsets,
            projection,
        })
    }

    pub fn params(&self) -> &SimulationParams {
        &self.params
    }

    pub fn group_name(group: usize) -> String {
        format!("g{group}")
    }

    pub fn iteration(&self, t: usize) -> u64 {
        t as u64 * self.params.cadence
    }

    pub fn manifest(&self, created_at: String) -> RunManifest {
        let p = &self.params;
        RunManifest {
            run_id: p.run_id(),
            cadence_n: p.cadence,
            sources: vec![
                SourceSpec {
                    name: "clip".into(),
                    dims: p.dims,
                },
                SourceSpec {
                    name: "disc_feat".into(),
                    dims: p.dims,
                },
            ],
            label_columns: vec!["origin".into(), "group".into()],
            embedding: p.embedding.clone(),
            created_at,
            primary_source: Some("clip".into()),
            metric_source: None,
            group_column: Some("group".into()),
        }
    }

    /// Mean of group `g`'s instances of `origin` in the `clip` source at snapshot `t`.
    pub fn group_mean(&self, t: usize, origin: Origin, g: usize) -> Vec<f64> {
        let d = self.params.dims;
        let a = t as f64 / (self.params.snapshots - 1) as f64;
        let dir = &self.directions[g];
        match (self.params.scenario, origin) {
            (Scenario::Split, _) => {
                let s = SPLIT_SEPARATION * a.powi(SPLIT_POWER);
                dir.iter().map(|v| s * v).collect()
            }
            (_, Origin::Real) => dir.iter().map(|v| GROUP_RADIUS * v).collect(),
            (Scenario::Bias, Origin::Generated) if g + 1 == self.directions.len() => {
                let own: Vec<f64> = dir.iter().map(|v| GROUP_RADIUS * v).collect();
                let target: Vec<f64> = self.directions[0].iter().map(|v| GROUP_RADIUS * v).collect();
                let v: Vec<f64> = (0..d).map(|i| target[i] - own[i]).collect();
                let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                let dist = START_OFFSET * (1.0 - a) + len * a;
                (0..d).map(|i| own[i] + dist * v[i] / len).collect()
            }
            (_, Origin::Generated) => {
                let off = &self.offsets[g];
                (0..d)
                    .map(|i| GROUP_RADIUS * dir[i] + START_OFFSET * (1.0 - a) * off[i])
                    .collect()
            }
        }
    }

    pub fn snapshot(&self, t: usize) -> Snapshot {
        let p = &self.params;
        let d = p.dims;
        let mut rng = rng_for(p.seed, 100 + t as u64);
        let mut jitter: Vec<Vec<f64>> = self
            .instances
            .iter()
            .map(|_| (0..d).map(|_| JITTER * normal(&mut rng)).collect())
            .collect();
        recenter(&mut jitter, &self.instances);

        let g = self.directions.len();
        let means: Vec<[Vec<f64>; 2]> = (0..g)
            .map(|k| [self.group_mean(t, Origin::Real, k), self.group_mean(t, Origin::Generated, k)])
            .collect();
        let mut clip = Vec::with_capacity(self.instances.len() * d);
        let mut disc = Vec::with_capacity(self.instances.len() * d);
        let mut row = vec![0.0; d];
        let scale = 1.0 / (d as f64).sqrt();
        for (inst, j) in self.instances.iter().zip(&jitter) {
            let mean = &means[inst.group][(inst.origin == Origin::Generated) as usize];
            for i in 0..d {
                row[i] = mean[i] + inst.base[i] + j[i];
            }
            clip.extend(row.iter().map(|&v| v as f32));
            disc.extend((0..d).map(|r| {
                let a = &self.projection[r * d..(r + 1) * d];
                let dot: f64 = a.iter().zip(&row).map(|(a, x)| a * x).sum();
                (dot.max(0.0) * scale) as f32
            }));
        }
        let ids: Vec<String> = self.instances.iter().map(|i| i.id.clone()).collect();
        let features = vec![
            FeatureMatrix::new("clip", ids.clone(), d, clip).expect("finite by construction"),
            FeatureMatrix::new("disc_feat", ids, d, disc).expect("finite by construction"),
        ];
        let labels = LabelTable {
            columns: vec!["group".into()],
            rows: self
                .instances
                .iter()
                .map(|i| LabelRow {
                    instance_id: i.id.clone(),
                    origin: i.origin,
                    values: vec![Self::group_name(i.group)],
                })
                .collect(),
        };
        let a = t as f64 / (p.snapshots - 1) as f64;
        let mut metrics = BTreeMap::new();
        metrics.insert(
            "loss_d".to_string(),
            0.7 - 0.2 * a + 0.02 * normal(&mut rng),
        );
        metrics.insert(
            "loss_g".to_string(),
            1.0 + 2.0 * (-3.0 * a).exp() + 0.05 * normal(&mut rng),
        );
        let thumbnails = if p.thumbnails {
            self.instances
                .iter()
                .map(|i| (i.id.clone(), thumbnail(i.group, i.origin, a)))
                .collect()
        } else {
            BTreeMap::new()
        };
        Snapshot {
            training_iteration: self.iteration(t),
            features,
            labels,
            metrics,
            thumbnails,
        }
    }
}

/// Writes a complete synthetic run into `out_dir`: manifest, a running
/// control file and all T snapshots. Fails if `out_dir` already holds a run.
pub fn simulate_run(out_dir: &Path, params: &SimulationParams) -> Result<RunManifest, IngestError> {
    let sim = Simulation::new(params.clone())?;
    if out_dir.join(MANIFEST_FILE).exists() {
        return Err(IngestError::Collision(out_dir.join(MANIFEST_FILE)));
    }
    let created_at = params
        .created_at
        .clone()
        .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    let manifest = sim.manifest(created_at);
    write_manifest(out_dir, &manifest)?;
    write_control(out_dir, &ControlState::default())?;
    for t in 0..params.snapshots {
        write_snapshot(out_dir, &sim.snapshot(t))?;
    }
    Ok(manifest)
}

fn unit_vector(rng: &mut DetRng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Subtracts the per-(origin, group) mean from each row.
fn recenter(rows: &mut [Vec<f64>], instances: &[Instance]) {
    let mut sums: BTreeMap<(bool, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for (r, i) in rows.iter().zip(instances) {
        let e = sums
            .entry((i.origin == Origin::Generated, i.group))
            .or_insert_with(|| (vec![0.0; r.len()], 0));
        for (s, v) in e.0.iter_mut().zip(r) {
            *s += v;
        }
        e.1 += 1;
    }
    for (r, i) in rows.iter_mut().zip(instances) {
        let (s, c) = &sums[&(i.origin == Origin::Generated, i.group)];
        for (v, s) in r.iter_mut().zip(s) {
            *v -= s / *c as f64;
        }
    }
}

const PALETTE: [[u8; 3]; 4] = [[230, 159, 0], [86, 180, 233], [0, 158, 115], [204, 121, 167]];

fn thumbnail(group: usize, origin: Origin, progress: f64) -> Vec<u8> {
    let base = PALETTE[group % PALETTE.len()];
    let shade = 0.5 + 0.5 * progress;
    let mut px = Vec::with_capacity((THUMB_SIZE * THUMB_SIZE * 3) as usize);
    for y in 0..THUMB_SIZE {
        for x in 0..THUMB_SIZE {
            if origin == Origin::Generated && x == y {
                px.extend([255, 255, 255]);
            } else {
                px.extend(base.map(|c| (c as f64 * shade).round() as u8));
            }
        }
    }
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(&px, THUMB_SIZE, THUMB_SIZE, ExtendedColorType::Rgb8)
        .expect("in-memory png");
    out
}
