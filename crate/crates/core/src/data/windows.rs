//! Sliding-window sample construction.

use crate::scalar::Scalar;

use super::{DataError, SpatioTemporalDataset};

/// Supervised samples: `S x p x N x D` inputs and `S x Q x N` targets
/// (standardized target channel). The input window of a sample strictly
/// precedes its target steps.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet<T> {
    pub lookback: usize,
    pub horizon: usize,
    pub num_nodes: usize,
    pub num_channels: usize,
    samples: usize,
    inputs: Vec<T>,
    targets: Vec<T>,
}

impl<T: Scalar> WindowSet<T> {
    /// Set with no samples (the shape metadata is still meaningful).
    pub fn empty(lookback: usize, horizon: usize, num_nodes: usize, num_channels: usize) -> Self {
        WindowSet {
            lookback,
            horizon,
            num_nodes,
            num_channels,
            samples: 0,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples
    }

    pub fn is_empty(&self) -> bool {
        self.samples == 0
    }

    pub fn input(&self, sample: usize) -> &[T] {
        let size = self.lookback * self.num_nodes * self.num_channels;
        &self.inputs[sample * size..(sample + 1) * size]
    }

    pub fn target(&self, sample: usize) -> &[T] {
        let size = self.horizon * self.num_nodes;
        &self.targets[sample * size..(sample + 1) * size]
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.lookback, self.num_nodes, self.num_channels]
    }
}

/// Stride-1 sliding windows over each contiguous block; a block of `T_b`
/// steps yields `T_b - p - Q + 1` samples and blocks never blend.
pub fn make_windows<T: Scalar>(
    blocks: &[SpatioTemporalDataset],
    lookback: usize,
    horizon: usize,
) -> Result<WindowSet<T>, DataError> {
    let first = blocks
        .first()
        .ok_or_else(|| DataError::Invariant("no blocks to window".into()))?;
    let n = first.num_nodes();
    let d = first.num_channels();
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut samples = 0usize;
    for block in blocks {
        if block.num_nodes() != n || block.num_channels() != d {
            return Err(DataError::Invariant(
                "blocks disagree on nodes or channels".into(),
            ));
        }
        let t = block.num_steps();
        if t < lookback + horizon {
            return Err(DataError::SegmentTooShort {
                len: t,
                need: lookback + horizon,
            });
        }
        for start in 0..=(t - lookback - horizon) {
            for step in start..start + lookback {
                for node in 0..n {
                    for channel in 0..d {
                        inputs.push(T::from_f64(block.get(step, node, channel)));
                    }
                }
            }
            for step in start + lookback..start + lookback + horizon {
                for node in 0..n {
                    targets.push(T::from_f64(block.get(step, node, 0)));
                }
            }
            samples += 1;
        }
    }
    Ok(WindowSet {
        lookback,
        horizon,
        num_nodes: n,
        num_channels: d,
        samples,
        inputs,
        targets,
    })
}
