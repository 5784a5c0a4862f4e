//! Adam with standard bias correction.

use crate::model::ParamBundle;
use crate::scalar::Scalar;

use super::TrainError;

/// First/second moment estimates mirroring the bundle's tensors.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(bundle: &ParamBundle<T>) -> Self {
        let shapes: Vec<usize> = bundle.entries().iter().map(|e| e.values.len()).collect();
        OptimizerState {
            first: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            second: shapes.iter().map(|&n| vec![T::ZERO; n]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over every tensor of the bundle.
///
/// `grads` must be in bundle order with matching lengths (they come from
/// `BoundParams::collect_grads`, which fails on any missing gradient).
pub fn adam_step<T: Scalar>(
    bundle: &mut ParamBundle<T>,
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
    learning_rate: f64,
) -> Result<(), TrainError> {
    if grads.len() != state.first.len() || grads.len() != bundle.entries().len() {
        return Err(TrainError::StateMismatch(format!(
            "expected {} gradient tensors, got {}",
            bundle.entries().len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = T::from_f64(1.0 - state.beta1.powi(t));
    let bias2 = T::from_f64(1.0 - state.beta2.powi(t));
    let beta1 = T::from_f64(state.beta1);
    let beta2 = T::from_f64(state.beta2);
    let one_minus_beta1 = T::from_f64(1.0 - state.beta1);
    let one_minus_beta2 = T::from_f64(1.0 - state.beta2);
    let lr = T::from_f64(learning_rate);
    let eps = T::from_f64(state.epsilon);

    for (i, entry) in bundle.entries_mut().iter_mut().enumerate() {
        let grad = &grads[i];
        if grad.len() != entry.values.len() {
            return Err(TrainError::StateMismatch(format!(
                "gradient length {} does not match parameter {} ({})",
                grad.len(),
                entry.name,
                entry.values.len()
            )));
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = beta1 * m[j] + one_minus_beta1 * g;
            v[j] = beta2 * v[j] + one_minus_beta2 * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            entry.values[j] = entry.values[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scale gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Vec<T>], max_norm: f64) {
    let norm_sq: f64 = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.to_f64() * v.to_f64())
        .sum();
    let norm = norm_sq.sqrt();
    if norm > max_norm {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v = *v * scale;
            }
        }
    }
}
