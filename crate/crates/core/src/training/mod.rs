//! Local supervised training: loss, optimizer, batching, early stopping.

mod adam;
mod metrics;
mod trainer;

pub use adam::{adam_step, clip_grad_norm, OptimizerState};
pub use metrics::{evaluate, seasonal_naive_baseline, Metrics};
pub(crate) use trainer::train_local_offset;
pub use trainer::{train_local, EpochRecord, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, WindowSet};
use crate::model::{model_forward, ModelConfig, ModelError, ParamBundle};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("window set is empty")]
    EmptyWindows,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("optimizer state does not match the bundle: {0}")]
    StateMismatch(String),
    #[error("seasonal-naive season {season} needs horizon <= season <= lookback ({lookback})")]
    BadSeason { season: usize, lookback: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Training loss; MAE is the default and the headline metric of this model
/// family, MSE is available by flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Optional global gradient-norm clip; dynamic adjacency can spike
    /// gradients early in training.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            seed: 42,
            loss: LossKind::Mae,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(TrainError::InvalidConfig(
                    "clip_norm must be positive".into(),
                ));
            }
        }
        // max_epochs == 0 is the degenerate "evaluate only" run
        if self.max_epochs > 0 && (self.patience == 0 || self.patience > self.max_epochs) {
            return Err(TrainError::InvalidConfig(format!(
                "patience must satisfy 1 <= patience <= max_epochs, got {} vs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

/// Best parameters seen so far and the validation loss that justified them.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub params: ParamBundle<T>,
    pub val_loss: f64,
    pub epoch: usize,
    pub round: Option<usize>,
}

/// Loss of a prediction batch against targets of the same shape, as a graph
/// scalar (differentiable).
pub fn loss_tensor<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    kind: LossKind,
) -> Result<Tensor<T>, TensorError> {
    let diff = pred.sub(target)?;
    match kind {
        LossKind::Mae => diff.abs()?.mean(),
        LossKind::Mse => diff.mul(&diff)?.mean(),
    }
}

/// Forward pass over one stored window (no recording unless the bound
/// parameters are trainable).
pub fn forward_window<T: Scalar>(
    graph: &Graph<T>,
    bound: &crate::model::BoundParams<T>,
    config: &ModelConfig,
    windows: &WindowSet<T>,
    sample: usize,
) -> Result<Tensor<T>, TrainError> {
    let window = graph.constant(&windows.input_shape(), windows.input(sample).to_vec())?;
    Ok(model_forward(&window, bound, config)?)
}

/// Mean loss over a whole window set on the standardized scale.
///
/// Per-window errors are computed at working precision and accumulated in
/// f64, window by window, so the result does not depend on chunking. This is
/// the single loss the trainer's early stopping, the best-checkpoint rule
/// and client-side validation all share.
pub fn validation_loss<T: Scalar>(
    config: &ModelConfig,
    params: &ParamBundle<T>,
    windows: &WindowSet<T>,
    kind: LossKind,
) -> Result<f64, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyWindows);
    }
    const CHUNK: usize = 64;
    let mut err_sum = 0.0f64;
    let mut count = 0usize;
    let mut sample = 0usize;
    while sample < windows.len() {
        let upper = (sample + CHUNK).min(windows.len());
        // fresh graph per chunk keeps the no-grad arena from growing
        let graph = Graph::new();
        let bound = params.bind(&graph, false)?;
        for s in sample..upper {
            let pred = forward_window(&graph, &bound, config, windows, s)?;
            let values = pred.values();
            let target = windows.target(s);
            for (p, t) in values.iter().zip(target.iter()) {
                let d = (*p - *t).to_f64();
                err_sum += match kind {
                    LossKind::Mae => d.abs(),
                    LossKind::Mse => d * d,
                };
            }
            count += values.len();
        }
        sample = upper;
    }
    Ok(err_sum / count as f64)
}
