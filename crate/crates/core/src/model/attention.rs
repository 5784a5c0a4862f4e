//! Multihead attention over the temporal axis.
//!
//! Each node attends over its own `lookback` steps independently; cross-node
//! mixing is the graph convolution's job, not attention's. Scores are the
//! scaled dot product of query and key vectors, normalized per row, and the
//! concatenated heads pass through the output projection to form the dynamic
//! embeddings consumed by the graph stage.

use super::{BoundParams, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor, TensorError};

/// `(lookback, N, embed_dim) -> (lookback, N, embed_dim)` dynamic embeddings.
pub fn multihead_attention<T: Scalar>(
    x: &Tensor<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let p = config.lookback;
    let n = config.num_nodes;
    let de = config.embed_dim;
    let expected = vec![p, n, de];
    if x.shape() != expected {
        return Err(ModelError::InputShape {
            what: "multihead_attention input",
            expected,
            got: x.shape(),
        });
    }

    // (N, p, d_e): batch the node axis so each node attends over time
    let per_node = x.transpose(0, 1)?;
    let mut heads = Vec::with_capacity(config.num_heads);
    for k in 0..config.num_heads {
        let query = per_node.matmul(params.get(&format!("attention.w_q.{k}"))?)?;
        let key = per_node.matmul(params.get(&format!("attention.w_k.{k}"))?)?;
        let value = per_node.matmul(params.get(&format!("attention.w_v.{k}"))?)?;
        let weights = attention_weights(&query, &key, config.hidden_dim)?;
        heads.push(weights.bmm(&value)?);
    }
    let merged = concat(&heads, 2)?;
    let projected = merged.matmul(params.get("attention.w_o")?)?;
    Ok(projected.transpose(0, 1)?)
}

/// Row-normalized scaled dot-product scores: `softmax(Q K^T / sqrt(d_h))`.
pub(crate) fn attention_weights<T: Scalar>(
    query: &Tensor<T>,
    key: &Tensor<T>,
    key_dim: usize,
) -> Result<Tensor<T>, TensorError> {
    let scale = T::from_f64(1.0 / (key_dim as f64).sqrt());
    query.bmm(&key.transpose(1, 2)?)?.scale(scale)?.softmax(2)
}
