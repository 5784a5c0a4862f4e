//! LSTM encoder stage.
//!
//! Runs the six gate equations per time step with states carried across the
//! window (zeros at the window start), independently per node, then projects
//! hidden states through `ReLU(X' W_proj + b_proj)` into embedding space.

use super::{BoundParams, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor};

/// Encode a `(lookback, N, D)` window into `(lookback, N, embed_dim)`.
pub fn lstm_encode<T: Scalar>(
    window: &Tensor<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let p = config.lookback;
    let n = config.num_nodes;
    let d = config.input_dim;
    let dh = config.hidden_dim;
    let expected = vec![p, n, d];
    if window.shape() != expected {
        return Err(ModelError::InputShape {
            what: "lstm_encode window",
            expected,
            got: window.shape(),
        });
    }

    let w_f = params.get("lstm.w_f")?;
    let w_i = params.get("lstm.w_i")?;
    let w_c = params.get("lstm.w_c")?;
    let w_o = params.get("lstm.w_o")?;
    let b_f = params.get("lstm.b_f")?;
    let b_i = params.get("lstm.b_i")?;
    let b_c = params.get("lstm.b_c")?;
    let b_o = params.get("lstm.b_o")?;

    let graph = window.graph();
    let mut hidden = graph.zeros(&[n, dh])?;
    let mut cell = graph.zeros(&[n, dh])?;
    let mut states = Vec::with_capacity(p);
    for t in 0..p {
        let x_t = window.slice_lead(t, 1)?.reshape(&[n, d])?;
        let joined = concat(&[x_t, hidden.clone()], 1)?;
        let forget = joined.matmul(w_f)?.add_bias(b_f)?.sigmoid()?;
        let input = joined.matmul(w_i)?.add_bias(b_i)?.sigmoid()?;
        let candidate = joined.matmul(w_c)?.add_bias(b_c)?.tanh()?;
        let output = joined.matmul(w_o)?.add_bias(b_o)?.sigmoid()?;
        cell = forget.mul(&cell)?.add(&input.mul(&candidate)?)?;
        hidden = output.mul(&cell.tanh()?)?;
        states.push(hidden.reshape(&[1, n, dh])?);
    }
    let sequence = concat(&states, 0)?;
    let projected = sequence
        .matmul(params.get("lstm.w_proj")?)?
        .add_bias(params.get("lstm.b_proj")?)?
        .relu()?;
    Ok(projected)
}
