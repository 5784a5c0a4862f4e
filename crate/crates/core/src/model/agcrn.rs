//! Dynamic-embedding adaptive graph-convolutional recurrence.
//!
//! At each step the embedding matrix `E_t` drives everything data-dependent:
//! the adjacency `softmax(ReLU(E_t E_t^T))`, the per-node gate weights
//! `sum_k E_t[n,k] W[k]` and the per-node biases `E_t b`. Gates blend the
//! previous state with a tanh candidate; the last state feeds the linear
//! prediction head.

use super::{BoundParams, ModelConfig, ModelError};
use crate::scalar::Scalar;
use crate::tensor::{concat, Tensor, TensorError};

/// `(lookback, N, D)` window + `(lookback, N, d_e)` embeddings ->
/// `(horizon, N)` prediction on the standardized scale.
pub fn agcrn_forward<T: Scalar>(
    window: &Tensor<T>,
    embeds: &Tensor<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let p = config.lookback;
    let n = config.num_nodes;
    let d = config.input_dim;
    let dh = config.hidden_dim;
    let de = config.embed_dim;
    if window.shape() != [p, n, d] {
        return Err(ModelError::InputShape {
            what: "agcrn_forward window",
            expected: vec![p, n, d],
            got: window.shape(),
        });
    }
    if embeds.shape() != [p, n, de] {
        return Err(ModelError::InputShape {
            what: "agcrn_forward embeddings",
            expected: vec![p, n, de],
            got: embeds.shape(),
        });
    }

    let w_reset = params.get("agcrn.w_reset")?;
    let w_update = params.get("agcrn.w_update")?;
    let w_cand = params.get("agcrn.w_cand")?;
    let b_reset = params.get("agcrn.b_reset")?;
    let b_update = params.get("agcrn.b_update")?;
    let b_cand = params.get("agcrn.b_cand")?;

    let graph = window.graph();
    let mut state = graph.zeros(&[n, dh])?;
    for t in 0..p {
        let x_t = window.slice_lead(t, 1)?.reshape(&[n, d])?;
        let e_t = embeds.slice_lead(t, 1)?.reshape(&[n, de])?;
        let adjacency = dynamic_adjacency(&e_t)?;

        let joined = concat(&[x_t.clone(), state.clone()], 1)?;
        let convolved = adjacency.matmul(&joined)?;
        let reset = convolved
            .node_matmul(&e_t.mix_weights(w_reset)?)?
            .add(&e_t.matmul(b_reset)?)?
            .sigmoid()?;
        let update = convolved
            .node_matmul(&e_t.mix_weights(w_update)?)?
            .add(&e_t.matmul(b_update)?)?
            .sigmoid()?;

        let gated_prev = update.mul(&state)?;
        let joined_cand = concat(&[x_t, gated_prev], 1)?;
        let candidate = adjacency
            .matmul(&joined_cand)?
            .node_matmul(&e_t.mix_weights(w_cand)?)?
            .add(&e_t.matmul(b_cand)?)?
            .tanh()?;

        state = gated_blend(&reset, &state, &candidate)?;
    }

    let prediction = state
        .matmul(params.get("agcrn.w_out")?)?
        .add_bias(params.get("agcrn.b_out")?)?;
    Ok(prediction.transpose(0, 1)?)
}

/// Data-dependent adjacency: row-softmax of `ReLU(E_t E_t^T)`.
///
/// A non-finite embedding surfaces here as a tensor error, which is the
/// earliest observable sign of an embedding blow-up.
pub(crate) fn dynamic_adjacency<T: Scalar>(e_t: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    e_t.matmul(&e_t.transpose(0, 1)?)?.relu()?.softmax(1)
}

/// `r (*) prev + (1 - r) (*) candidate`
pub(crate) fn gated_blend<T: Scalar>(
    reset: &Tensor<T>,
    prev: &Tensor<T>,
    candidate: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let ones = reset
        .graph()
        .constant(&reset.shape(), vec![T::ONE; reset.numel()])?;
    reset.mul(prev)?.add(&ones.sub(reset)?.mul(candidate)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamBundle;
    use crate::tensor::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adjacency_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Graph::new();
        let e = g
            .constant(&[5, 3], (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .unwrap();
        let adj = dynamic_adjacency(&e).unwrap();
        for row in adj.values().chunks(5) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn adjacency_matches_hand_value() {
        // E = [[1],[2]] gives row 0 = [1/(1+e), e/(1+e)]
        let g = Graph::new();
        let e = g.constant(&[2, 1], vec![1.0, 2.0]).unwrap();
        let adj = dynamic_adjacency(&e).unwrap();
        let v = adj.values();
        assert!((v[0] - 0.26894).abs() < 1e-5);
        assert!((v[1] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn all_ones_gate_carries_state_through() {
        let g = Graph::new();
        let r = g.constant(&[2, 3], vec![1.0; 6]).unwrap();
        let prev = g
            .constant(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25])
            .unwrap();
        let cand = g.constant(&[2, 3], vec![9.0; 6]).unwrap();
        let blended = gated_blend(&r, &prev, &cand).unwrap();
        assert_eq!(blended.values(), prev.values());
    }

    #[test]
    fn prediction_shape_contract() {
        let config = ModelConfig {
            num_nodes: 4,
            input_dim: 3,
            hidden_dim: 5,
            embed_dim: 5,
            num_heads: 1,
            lookback: 3,
            horizon: 2,
        };
        let bundle: ParamBundle<f64> = ParamBundle::init(&config, 21);
        let g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let window = g
            .constant(
                &[3, 4, 3],
                (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
        let embeds = g
            .constant(
                &[3, 4, 5],
                (0..60).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
        let bound = bundle.bind(&g, false).unwrap();
        let out = agcrn_forward(&window, &embeds, &bound, &config).unwrap();
        assert_eq!(out.shape(), vec![2, 4]);
    }
}
