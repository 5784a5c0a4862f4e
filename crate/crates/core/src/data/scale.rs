//! Per-(node, channel) standardization.
//!
//! Statistics come from the training segment only and are reused verbatim
//! for validation and test data and for de-standardizing predictions;
//! anything else leaks information across the chronological boundary.

use super::{DataError, SpatioTemporalDataset};

/// Mean and population standard deviation per (node, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    num_nodes: usize,
    num_channels: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    /// (node, channel) pairs whose variance was zero; their std is pinned
    /// to 1 so the transform is still invertible.
    pub clamped: Vec<(usize, usize)>,
}

impl Scaler {
    pub fn mean(&self, node: usize, channel: usize) -> f64 {
        self.mean[node * self.num_channels + channel]
    }

    pub fn std(&self, node: usize, channel: usize) -> f64 {
        self.std[node * self.num_channels + channel]
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_channels(&self) -> usize {
        self.num_channels
    }

    fn check(&self, ds: &SpatioTemporalDataset) -> Result<(), DataError> {
        if ds.num_nodes() != self.num_nodes || ds.num_channels() != self.num_channels {
            return Err(DataError::ScalerShape {
                expected: self.num_nodes,
                expected_ch: self.num_channels,
                got: ds.num_nodes(),
                got_ch: ds.num_channels(),
            });
        }
        Ok(())
    }

    /// Map standardized target-channel values (rows of `num_nodes`) back to
    /// original units in place.
    pub fn inverse_transform_target(&self, values: &mut [f64], num_nodes: usize) {
        debug_assert_eq!(num_nodes, self.num_nodes);
        debug_assert_eq!(values.len() % num_nodes, 0);
        for (i, v) in values.iter_mut().enumerate() {
            let node = i % num_nodes;
            *v = *v * self.std(node, 0) + self.mean(node, 0);
        }
    }
}

/// Fit on the training blocks jointly (several blocks appear when a source
/// covers disjoint recording periods).
pub fn fit_scaler(train_blocks: &[SpatioTemporalDataset]) -> Result<Scaler, DataError> {
    let first = train_blocks
        .first()
        .ok_or_else(|| DataError::Invariant("no training blocks to fit on".into()))?;
    let n = first.num_nodes();
    let d = first.num_channels();
    for block in train_blocks {
        if block.num_nodes() != n || block.num_channels() != d {
            return Err(DataError::Invariant(
                "training blocks disagree on nodes or channels".into(),
            ));
        }
    }
    let cells = n * d;
    let total_steps: usize = train_blocks.iter().map(|b| b.num_steps()).sum();
    let mut mean = vec![0.0f64; cells];
    for block in train_blocks {
        for step in 0..block.num_steps() {
            for node in 0..n {
                for channel in 0..d {
                    mean[node * d + channel] += block.get(step, node, channel);
                }
            }
        }
    }
    for m in mean.iter_mut() {
        *m /= total_steps as f64;
    }
    let mut var = vec![0.0f64; cells];
    for block in train_blocks {
        for step in 0..block.num_steps() {
            for node in 0..n {
                for channel in 0..d {
                    let delta = block.get(step, node, channel) - mean[node * d + channel];
                    var[node * d + channel] += delta * delta;
                }
            }
        }
    }
    let mut clamped = Vec::new();
    let std: Vec<f64> = var
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let s = (v / total_steps as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                clamped.push((i / d, i % d));
                1.0
            }
        })
        .collect();
    Ok(Scaler {
        num_nodes: n,
        num_channels: d,
        mean,
        std,
        clamped,
    })
}

/// Z-score every channel with the scaler's (training) statistics.
pub fn transform(
    ds: &SpatioTemporalDataset,
    scaler: &Scaler,
) -> Result<SpatioTemporalDataset, DataError> {
    scaler.check(ds)?;
    let d = ds.num_channels();
    let values = ds
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let cell = i % (ds.num_nodes() * d);
            (v - scaler.mean[cell]) / scaler.std[cell]
        })
        .collect();
    Ok(ds.with_values(values, d))
}
