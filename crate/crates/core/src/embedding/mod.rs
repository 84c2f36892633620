//! Evolutionary embedding of per-snapshot feature matrices.
//!
//! Snapshot `k` occupies the vertical band `[c_k - W/2, c_k + W/2]` with
//! `c_k = k * (W + G)`. Within a band, points minimize the exact t-SNE KL cost;
//! across bands a quadratic penalty on the y coordinate keeps matched instances
//! (same `instance_id`) at the same height. x is hard-clamped into the band after
//! every optimizer step and is never touched by the alignment term.

mod affinity;
mod align;
mod evolve;
mod export;
mod gradient;
mod init;
mod optimize;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::FeatureError;

pub use affinity::{
    affinities, conditional_affinities, pairwise_sq_dists, symmetrize, AffinityMatrix,
    ConditionalAffinities, SquareMatrix,
};
pub use align::{alignment_gradient, alignment_penalty, Matching};
pub use evolve::{
    append_iteration, batch_embed, batch_embed_observed, embed_first, embed_first_observed,
    evolution_cost, StepObserver,
};
pub use export::{read_layout_json, BandDocument, LayoutDocument, PointDocument, LAYOUT_FORMAT};
pub use gradient::{kl_cost, tsne_gradient};
pub use init::principal_components;

/// A 2D position `[x, y]`.
pub type Point2 = [f64; 2];

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("invalid embedding config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error("degenerate snapshot: {0}")]
    Degenerate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    #[default]
    Progressive,
    Batch,
}

impl std::str::FromStr for EmbeddingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "progressive" => Ok(Self::Progressive),
            "batch" => Ok(Self::Batch),
            other => Err(format!(
                "unknown embedding mode `{other}` (expected `progressive` or `batch`)"
            )),
        }
    }
}

/// Every knob of the band layout and its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    pub perplexity: f64,
    pub steps: usize,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_steps: usize,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    /// First step that uses `momentum_late`.
    pub momentum_switch_step: usize,
    pub lambda_align: f64,
    pub band_width: f64,
    pub band_gap: f64,
    pub seed: u64,
    pub mode: EmbeddingMode,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            steps: 1000,
            early_exaggeration_factor: 12.0,
            early_exaggeration_steps: 250,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            momentum_switch_step: 250,
            lambda_align: 0.01,
            band_width: 1.0,
            band_gap: 0.5,
            seed: 0,
            mode: EmbeddingMode::Progressive,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let fail = |msg: String| Err(EmbedError::Config(msg));
        if !(self.perplexity.is_finite() && self.perplexity > 0.0) {
            return fail(format!("perplexity must be positive, got {}", self.perplexity));
        }
        if self.steps == 0 {
            return fail("steps must be positive".into());
        }
        if !(self.early_exaggeration_factor.is_finite() && self.early_exaggeration_factor >= 1.0) {
            return fail(format!(
                "early_exaggeration_factor must be >= 1, got {}",
                self.early_exaggeration_factor
            ));
        }
        if self.early_exaggeration_steps > self.steps {
            return fail(format!(
                "early_exaggeration_steps ({}) exceeds steps ({})",
                self.early_exaggeration_steps, self.steps
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, m) in [
            ("momentum_early", self.momentum_early),
            ("momentum_late", self.momentum_late),
        ] {
            if !(0.0..1.0).contains(&m) {
                return fail(format!("{name} must lie in [0, 1), got {m}"));
            }
        }
        if !(self.lambda_align.is_finite() && self.lambda_align >= 0.0) {
            return fail(format!("lambda_align must be >= 0, got {}", self.lambda_align));
        }
        if !(self.band_width.is_finite() && self.band_width > 0.0) {
            return fail(format!("band_width must be positive, got {}", self.band_width));
        }
        if !(self.band_gap.is_finite() && self.band_gap >= 0.0) {
            return fail(format!("band_gap must be >= 0, got {}", self.band_gap));
        }
        Ok(())
    }

    /// Center of band `k`.
    pub fn band_center(&self, k: usize) -> f64 {
        k as f64 * (self.band_width + self.band_gap)
    }

    /// Inclusive x interval of band `k`.
    pub fn band_bounds(&self, k: usize) -> (f64, f64) {
        let c = self.band_center(k);
        let half = self.band_width / 2.0;
        (c - half, c + half)
    }

    pub(crate) fn exaggeration_at(&self, step: usize) -> f64 {
        if step < self.early_exaggeration_steps {
            self.early_exaggeration_factor
        } else {
            1.0
        }
    }

    pub(crate) fn momentum_at(&self, step: usize) -> f64 {
        if step < self.momentum_switch_step {
            self.momentum_early
        } else {
            self.momentum_late
        }
    }
}

/// Hex SHA-256 over the compact JSON of the config followed by one
/// `"\n<training_iteration>"` line per band in ingestion order.
pub fn config_hash(config: &EmbeddingConfig, iterations: &[u64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    for it in iterations {
        hasher.update(format!("\n{it}").as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPoint {
    pub instance_id: String,
    pub x: f64,
    pub y: f64,
}

/// The layout of one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct BandLayout {
    /// Position of the snapshot in the run (0-based), not the training iteration.
    pub index: usize,
    pub training_iteration: u64,
    pub center: f64,
    pub width: f64,
    pub points: Vec<BandPoint>,
}

impl BandLayout {
    pub fn positions(&self) -> Vec<Point2> {
        self.points.iter().map(|p| [p.x, p.y]).collect()
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.points.iter().map(|p| p.instance_id.clone()).collect()
    }

    pub fn point(&self, instance_id: &str) -> Option<&BandPoint> {
        self.points.iter().find(|p| p.instance_id == instance_id)
    }
}

/// All bands of a run. Values of this type are never mutated after they are
/// returned; appending produces a new layout that shares no state with the old.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionLayout {
    pub config: EmbeddingConfig,
    pub bands: Vec<BandLayout>,
    pub config_hash: String,
    /// Index of the last band that later appends may not change. `None` in batch mode.
    pub frozen_upto: Option<usize>,
}

impl EvolutionLayout {
    pub fn iterations(&self) -> Vec<u64> {
        self.bands.iter().map(|b| b.training_iteration).collect()
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }
}
