//! Row-major feature matrices keyed by instance id.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature matrix `{source_name}`: {values} values do not form {rows} rows of {dims} dims")]
    Shape {
        source_name: String,
        rows: usize,
        dims: usize,
        values: usize,
    },
    #[error("feature matrix `{source_name}`: dims must be at least 1")]
    ZeroDims { source_name: String },
    #[error("feature matrix `{source_name}`: duplicate instance id `{id}` at row {row}")]
    DuplicateId {
        source_name: String,
        id: String,
        row: usize,
    },
    #[error("feature matrix `{source_name}`: non-finite value at row {row}, column {col}")]
    NonFinite {
        source_name: String,
        row: usize,
        col: usize,
    },
}

/// N×D matrix of finite `f32` values with one unique instance id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    source_name: String,
    instance_ids: Vec<String>,
    dims: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        source_name: impl Into<String>,
        instance_ids: Vec<String>,
        dims: usize,
        data: Vec<f32>,
    ) -> Result<Self, FeatureError> {
        let source_name = source_name.into();
        if dims == 0 {
            return Err(FeatureError::ZeroDims { source_name });
        }
        if data.len() != instance_ids.len() * dims {
            return Err(FeatureError::Shape {
                source_name,
                rows: instance_ids.len(),
                dims,
                values: data.len(),
            });
        }
        let mut seen = HashSet::with_capacity(instance_ids.len());
        for (row, id) in instance_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(FeatureError::DuplicateId {
                    source_name,
                    id: id.clone(),
                    row,
                });
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite {
                source_name,
                row: pos / dims,
                col: pos % dims,
            });
        }
        Ok(Self {
            source_name,
            instance_ids,
            dims,
            data,
        })
    }

    /// Builds a matrix from rows; ids are `"{prefix}{index}"`. Mostly useful in tests.
    pub fn from_rows(
        source_name: impl Into<String>,
        rows: &[Vec<f32>],
        id_prefix: &str,
    ) -> Result<Self, FeatureError> {
        let dims = rows.first().map_or(1, Vec::len);
        let ids = (0..rows.len()).map(|i| format!("{id_prefix}{i}")).collect();
        let data = rows.iter().flatten().copied().collect();
        Self::new(source_name, ids, dims, data)
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn rows(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn instance_ids(&self) -> &[String] {
        &self.instance_ids
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.dims);
        let mut ids = Vec::with_capacity(rows.len());
        for &r in rows {
            data.extend_from_slice(self.row(r));
            ids.push(self.instance_ids[r].clone());
        }
        FeatureMatrix {
            source_name: self.source_name.clone(),
            instance_ids: ids,
            dims: self.dims,
            data,
        }
    }

    pub fn into_parts(self) -> (String, Vec<String>, usize, Vec<f32>) {
        (self.source_name, self.instance_ids, self.dims, self.data)
    }
}

/// Squared Euclidean distance between two rows, accumulated in `f64`.
#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&u, &v)| {
            let d = f64::from(u) - f64::from(v);
            d * d
        })
        .sum()
}
