//! Spatiotemporal datasets: generation, ingestion and preprocessing.
//!
//! A dataset is a `T x N x D` array over strictly increasing, equally
//! spaced timestamps. Channel 0 is the target series; the rest are
//! exogenous. Datasets are immutable after construction; every
//! preprocessing step returns a new one.

mod calendar;
mod csvio;
mod scale;
mod split;
mod synthetic;
mod windows;

pub use calendar::add_calendar_features;
pub use csvio::{load_csv, load_csv_segmented, write_csv, CsvSchema, LoadReport};
pub use scale::{fit_scaler, transform, Scaler};
pub use split::split_chronological;
pub use synthetic::{generate_synthetic, SyntheticSpec};
pub use windows::{make_windows, WindowSet};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dataset: {0}")]
    Invariant(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: cannot parse timestamp {value:?} (expected ISO-8601)")]
    BadTimestamp { line: usize, value: String },
    #[error("line {line}: cannot parse {column} as a number")]
    BadNumber { line: usize, column: String },
    #[error("duplicate row for (time {timestamp}, node {node})")]
    DuplicateRow { timestamp: String, node: String },
    #[error("column {0} missing from CSV header")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("timestamps are not equally spaced at index {index}")]
    IrregularSpacing { index: usize },
    #[error("segment of {len} steps is shorter than the required {need}")]
    SegmentTooShort { len: usize, need: usize },
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error(
        "scaler fitted for {expected} nodes x {expected_ch} channels, dataset has {got} x {got_ch}"
    )]
    ScalerShape {
        expected: usize,
        expected_ch: usize,
        got: usize,
        got_ch: usize,
    },
}

/// `T x N x D` values with timestamps and node identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatioTemporalDataset {
    values: Vec<f64>,
    num_steps: usize,
    num_nodes: usize,
    num_channels: usize,
    timestamps: Vec<i64>,
    node_ids: Vec<String>,
}

impl SpatioTemporalDataset {
    pub fn new(
        values: Vec<f64>,
        timestamps: Vec<i64>,
        node_ids: Vec<String>,
        num_channels: usize,
    ) -> Result<Self, DataError> {
        let num_steps = timestamps.len();
        let num_nodes = node_ids.len();
        if num_steps < 2 {
            return Err(DataError::Invariant(
                "at least two time steps are required".into(),
            ));
        }
        if num_nodes == 0 || num_channels == 0 {
            return Err(DataError::Invariant(
                "node and channel counts must be positive".into(),
            ));
        }
        if values.len() != num_steps * num_nodes * num_channels {
            return Err(DataError::Invariant(format!(
                "expected {} values, got {}",
                num_steps * num_nodes * num_channels,
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(DataError::Invariant("values must be finite".into()));
        }
        let step = timestamps[1] - timestamps[0];
        if step <= 0 {
            return Err(DataError::Invariant(
                "timestamps must be strictly increasing".into(),
            ));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            if pair[1] - pair[0] != step {
                return Err(DataError::IrregularSpacing { index: i + 1 });
            }
        }
        Ok(SpatioTemporalDataset {
            values,
            num_steps,
            num_nodes,
            num_channels,
            timestamps,
            node_ids,
        })
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Seconds between consecutive timestamps.
    pub fn step_seconds(&self) -> i64 {
        self.timestamps[1] - self.timestamps[0]
    }

    pub fn get(&self, step: usize, node: usize, channel: usize) -> f64 {
        self.values[(step * self.num_nodes + node) * self.num_channels + channel]
    }

    /// Contiguous chronological sub-dataset over `[start, end)`.
    pub fn slice_steps(&self, start: usize, end: usize) -> Result<Self, DataError> {
        if start >= end || end > self.num_steps || end - start < 2 {
            return Err(DataError::Invariant(format!(
                "invalid step range {start}..{end} of {}",
                self.num_steps
            )));
        }
        let row = self.num_nodes * self.num_channels;
        Ok(SpatioTemporalDataset {
            values: self.values[start * row..end * row].to_vec(),
            num_steps: end - start,
            num_nodes: self.num_nodes,
            num_channels: self.num_channels,
            timestamps: self.timestamps[start..end].to_vec(),
            node_ids: self.node_ids.clone(),
        })
    }

    pub(crate) fn with_values(
        &self,
        values: Vec<f64>,
        num_channels: usize,
    ) -> SpatioTemporalDataset {
        debug_assert_eq!(values.len(), self.num_steps * self.num_nodes * num_channels);
        SpatioTemporalDataset {
            values,
            num_steps: self.num_steps,
            num_nodes: self.num_nodes,
            num_channels,
            timestamps: self.timestamps.clone(),
            node_ids: self.node_ids.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_enforces_invariants() {
        let ids = vec!["a".to_string()];
        assert!(SpatioTemporalDataset::new(vec![1.0], vec![0], ids.clone(), 1).is_err());
        assert!(SpatioTemporalDataset::new(vec![1.0, 2.0], vec![0, 3600], ids.clone(), 1).is_ok());
        // irregular spacing
        let err =
            SpatioTemporalDataset::new(vec![1.0, 2.0, 3.0], vec![0, 3600, 7000], ids.clone(), 1)
                .unwrap_err();
        assert!(matches!(err, DataError::IrregularSpacing { index: 2 }));
        // non-finite
        assert!(SpatioTemporalDataset::new(vec![1.0, f64::NAN], vec![0, 3600], ids, 1).is_err());
    }

    #[test]
    fn slice_preserves_layout() {
        let ds = SpatioTemporalDataset::new(
            (0..12).map(|v| v as f64).collect(),
            vec![0, 60, 120, 180],
            vec!["x".into()],
            3,
        )
        .unwrap();
        let cut = ds.slice_steps(1, 3).unwrap();
        assert_eq!(cut.num_steps(), 2);
        assert_eq!(cut.values(), &[3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(cut.timestamps(), &[60, 120]);
    }
}
