//! Finite-difference verification of reverse-mode gradients.
//!
//! Always runs at 64-bit precision; central differences at 32-bit are too
//! noisy to separate a wrong backward rule from rounding error.

use super::{Graph, Tensor, TensorError};

/// One element whose analytic and numeric gradients disagree beyond tolerance.
#[derive(Debug, Clone)]
pub struct GradFailure {
    /// Index of the parameter tensor in the checked list.
    pub param: usize,
    /// Flat element index within that tensor.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a [`grad_check`] run. Failures are listed, never panicked on.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub failures: Vec<GradFailure>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Compare the analytic gradient of `f` against central finite differences.
///
/// `f` must deterministically build a scalar from leaves created on the
/// given graph, in the order of `params` (each `(shape, values)`). For each
/// element the relative error `|a - n| / max(1, |a|, |n|)` is measured
/// against `tol`; `step` is the half-width of the central difference.
pub fn grad_check<F>(
    f: F,
    params: &[(Vec<usize>, Vec<f64>)],
    tol: f64,
    step: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    // analytic pass
    let graph = Graph::new();
    let leaves: Vec<Tensor<f64>> = params
        .iter()
        .map(|(shape, values)| graph.var(shape, values.clone()))
        .collect::<Result<_, _>>()?;
    let root = f(&graph, &leaves)?;
    root.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let eval = |values: &[Vec<f64>]| -> Result<f64, TensorError> {
        let g = Graph::new();
        let leaves: Vec<Tensor<f64>> = params
            .iter()
            .zip(values.iter())
            .map(|((shape, _), v)| g.constant(shape, v.clone()))
            .collect::<Result<_, _>>()?;
        f(&g, &leaves)?.item()
    };

    let base: Vec<Vec<f64>> = params.iter().map(|(_, v)| v.clone()).collect();
    let mut failures = Vec::new();
    let mut max_rel_err = 0.0f64;
    let mut checked = 0usize;
    for (pi, grad) in analytic.iter().enumerate() {
        for (ei, &a) in grad.iter().enumerate() {
            let mut probe = base.clone();
            probe[pi][ei] += step;
            let up = eval(&probe)?;
            probe[pi][ei] = base[pi][ei] - step;
            let down = eval(&probe)?;
            let numeric = (up - down) / (2.0 * step);
            let rel_err = (a - numeric).abs() / f64::max(1.0, f64::max(a.abs(), numeric.abs()));
            max_rel_err = max_rel_err.max(rel_err);
            checked += 1;
            if rel_err > tol {
                failures.push(GradFailure {
                    param: pi,
                    index: ei,
                    analytic: a,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    Ok(GradCheckReport {
        checked,
        max_rel_err,
        tol,
        failures,
    })
}
