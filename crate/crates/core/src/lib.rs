//! Progressive monitoring of generative-model training.
//!
//! The crate is split into three layers:
//!
//! * [`embedding`]: the evolutionary embedding. Every snapshot gets its own
//!   vertical band; inside a band points are laid out with exact t-SNE, and a
//!   quadratic penalty keeps each instance at a stable height across bands.
//! * [`metrics`]: per-group FID, real/generated neighborhood overlap and
//!   silhouette-based cluster separation.
//! * [`ingest`]: the on-disk run format, validation, the directory watcher,
//!   the control channel file, and a synthetic run simulator.

pub mod embedding;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod rng;

pub use embedding::{
    append_iteration, batch_embed, embed_first, BandLayout, BandPoint, EmbedError,
    EmbeddingConfig, EmbeddingMode, EvolutionLayout,
};
pub use features::{FeatureError, FeatureMatrix};
