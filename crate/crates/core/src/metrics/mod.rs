//! Bias and quality metrics per snapshot and group.
//!
//! Everything here is a pure, deterministic function of its inputs.

mod fid;
mod linalg;
mod moments;
mod overlap;
mod separation;
mod series;

use thiserror::Error;

pub use fid::{fid, fid_detailed, fid_from_moments, FidReport};
pub use linalg::matrix_sqrt_psd;
pub use moments::{gaussian_moments, GaussianMoments};
pub use overlap::{neighborhood_overlap, DEFAULT_OVERLAP_K};
pub use separation::{cluster_separation, group_separation, silhouette_samples};
pub use series::{
    build_metric_series, metric_entry, GroupMetrics, MetricEntry, MetricOptions, MetricSeries,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("separation undefined: {0}")]
    SeparationUndefined(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}
