//! Mini-batch training loop with validation-based early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowSet;
use crate::model::{ModelConfig, ParamBundle};
use crate::scalar::Scalar;
use crate::tensor::{concat, Graph};

use super::{
    adam_step, clip_grad_norm, forward_window, loss_tensor, validation_loss, Checkpoint,
    OptimizerState, TrainConfig, TrainError,
};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct TrainOutcome<T> {
    /// Parameters after the last executed epoch (what federation shares).
    pub params: ParamBundle<T>,
    /// Snapshot with the lowest validation loss (what evaluation restores).
    pub best: Checkpoint<T>,
    pub history: Vec<EpochRecord>,
}

/// Seeded epochs of shuffled mini-batches (last partial batch kept), full
/// validation loss after each epoch, best-checkpoint tracking, and early
/// stopping `patience` epochs after the last improvement.
///
/// Batch order comes from a dedicated per-epoch stream of the seeded RNG, so
/// federated and local runs with equal seeds see identical batches.
pub fn train_local<T: Scalar>(
    model_cfg: &ModelConfig,
    params: ParamBundle<T>,
    train: &WindowSet<T>,
    val: &WindowSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, TrainError> {
    train_local_offset(model_cfg, params, train, val, cfg, 0)
}

/// Same loop with shifted epoch streams: federation round `r` of `E` local
/// epochs passes `r * E`, so a full federated run consumes the identical
/// batch-order sequence a plain local run of `R * E` epochs would.
pub(crate) fn train_local_offset<T: Scalar>(
    model_cfg: &ModelConfig,
    params: ParamBundle<T>,
    train: &WindowSet<T>,
    val: &WindowSet<T>,
    cfg: &TrainConfig,
    epoch_stream_offset: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::EmptyWindows);
    }
    let mut params = params;
    let initial_val = validation_loss(model_cfg, &params, val, cfg.loss)?;
    let mut best = Checkpoint {
        params: params.clone(),
        val_loss: initial_val,
        epoch: 0,
        round: None,
    };
    let mut state = OptimizerState::new(&params);
    let mut history = Vec::new();
    let mut epochs_since_improvement = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch_stream_offset + epoch as u64);
        order.shuffle(&mut rng);

        let mut err_weighted = 0.0f64;
        let mut elements = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let graph: Graph<T> = Graph::new();
            let bound = params.bind(&graph, true)?;
            let mut preds = Vec::with_capacity(batch.len());
            let mut targets = Vec::new();
            for &sample in batch {
                let pred = forward_window(&graph, &bound, model_cfg, train, sample)?;
                preds.push(pred.reshape(&[1, model_cfg.horizon, model_cfg.num_nodes])?);
                targets.extend_from_slice(train.target(sample));
            }
            let stacked = concat(&preds, 0)?;
            let target = graph.constant(
                &[batch.len(), model_cfg.horizon, model_cfg.num_nodes],
                targets,
            )?;
            let loss = loss_tensor(&stacked, &target, cfg.loss)?;
            loss.backward()?;
            let mut grads = bound.collect_grads()?;
            if let Some(max_norm) = cfg.clip_norm {
                clip_grad_norm(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut state, cfg.learning_rate)?;

            let batch_elems = batch.len() * model_cfg.horizon * model_cfg.num_nodes;
            err_weighted += loss.item()?.to_f64() * batch_elems as f64;
            elements += batch_elems;
        }

        let train_loss = err_weighted / elements as f64;
        let val_loss = validation_loss(model_cfg, &params, val, cfg.loss)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.val_loss {
            best = Checkpoint {
                params: params.clone(),
                val_loss,
                epoch,
                round: None,
            };
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params,
        best,
        history,
    })
}
