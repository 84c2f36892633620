//! JSON export of an [`EvolutionLayout`].
//!
//! Schema (`format = "evowatch.layout/1"`):
//!
//! ```text
//! {
//!   "format": "evowatch.layout/1",
//!   "config_hash": "<64 hex chars>",
//!   "config": { ...EmbeddingConfig... },
//!   "frozen_upto": <int> | null,
//!   "bands": [
//!     { "index": 0, "training_iteration": 0, "center": 0.0,
//!       "x_min": -0.5, "x_max": 0.5,
//!       "points": [ { "id": "gen_0000", "x": 0.123456789, "y": -1.23456789 }, ... ] },
//!     ...
//!   ]
//! }
//! ```
//!
//! Coordinates are rounded to 9 significant decimal digits. Bands appear in
//! index order; points keep the instance order of their snapshot. The output
//! is compact (no whitespace) with a trailing newline.

use serde::{Deserialize, Serialize, Serializer};

use super::{BandLayout, EmbeddingConfig, EvolutionLayout};

pub const LAYOUT_FORMAT: &str = "evowatch.layout/1";

fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn sig9<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig9(*v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub format: String,
    pub config_hash: String,
    pub config: EmbeddingConfig,
    pub frozen_upto: Option<usize>,
    pub bands: Vec<BandDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDocument {
    pub index: usize,
    pub training_iteration: u64,
    #[serde(serialize_with = "sig9")]
    pub center: f64,
    #[serde(serialize_with = "sig9")]
    pub x_min: f64,
    #[serde(serialize_with = "sig9")]
    pub x_max: f64,
    pub points: Vec<PointDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointDocument {
    pub id: String,
    #[serde(serialize_with = "sig9")]
    pub x: f64,
    #[serde(serialize_with = "sig9")]
    pub y: f64,
}

impl BandDocument {
    pub fn from_band(band: &BandLayout) -> Self {
        Self {
            index: band.index,
            training_iteration: band.training_iteration,
            center: band.center,
            x_min: band.center - band.width / 2.0,
            x_max: band.center + band.width / 2.0,
            points: band
                .points
                .iter()
                .map(|p| PointDocument {
                    id: p.instance_id.clone(),
                    x: p.x,
                    y: p.y,
                })
                .collect(),
        }
    }

    /// Serialized form of this band alone, as it appears inside the document.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("band serializes")
    }
}

impl EvolutionLayout {
    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            format: LAYOUT_FORMAT.to_string(),
            config_hash: self.config_hash.clone(),
            config: self.config.clone(),
            frozen_upto: self.frozen_upto,
            bands: self.bands.iter().map(BandDocument::from_band).collect(),
        }
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.to_document()).expect("layout serializes");
        out.push(b'\n');
        out
    }
}

pub fn read_layout_json(bytes: &[u8]) -> Result<LayoutDocument, serde_json::Error> {
    serde_json::from_slice(bytes)
}
