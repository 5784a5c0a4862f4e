//! Evaluation in original units, plus the seasonal-naive yardstick.

use crate::data::{Scaler, WindowSet};
use crate::model::{ModelConfig, ParamBundle};
use crate::scalar::Scalar;
use crate::tensor::Graph;

use super::{forward_window, TrainError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
}

impl Metrics {
    /// MAE and RMSE of raw prediction errors, accumulated in f64.
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> Metrics {
        let mut acc = ErrorAccumulator::new();
        for e in errors {
            acc.push(e);
        }
        acc.finish()
    }
}

struct ErrorAccumulator {
    abs_sum: f64,
    sq_sum: f64,
    count: usize,
}

impl ErrorAccumulator {
    fn new() -> Self {
        ErrorAccumulator {
            abs_sum: 0.0,
            sq_sum: 0.0,
            count: 0,
        }
    }

    fn push(&mut self, error: f64) {
        self.abs_sum += error.abs();
        self.sq_sum += error * error;
        self.count += 1;
    }

    fn finish(self) -> Metrics {
        Metrics {
            mae: self.abs_sum / self.count as f64,
            rmse: (self.sq_sum / self.count as f64).sqrt(),
        }
    }
}

/// De-standardize predictions and targets with the training scaler and
/// report MAE/RMSE over all samples, horizon steps and nodes.
pub fn evaluate<T: Scalar>(
    config: &ModelConfig,
    params: &ParamBundle<T>,
    windows: &WindowSet<T>,
    scaler: &Scaler,
) -> Result<Metrics, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyWindows);
    }
    const CHUNK: usize = 64;
    let n = config.num_nodes;
    let mut acc = ErrorAccumulator::new();
    let mut sample = 0usize;
    while sample < windows.len() {
        let upper = (sample + CHUNK).min(windows.len());
        let graph = Graph::new();
        let bound = params.bind(&graph, false)?;
        for s in sample..upper {
            let pred = forward_window(&graph, &bound, config, windows, s)?;
            let mut pred: Vec<f64> = pred.values().iter().map(|v| v.to_f64()).collect();
            let mut target: Vec<f64> = windows.target(s).iter().map(|v| v.to_f64()).collect();
            scaler.inverse_transform_target(&mut pred, n);
            scaler.inverse_transform_target(&mut target, n);
            for (p, t) in pred.iter().zip(target.iter()) {
                acc.push(p - t);
            }
        }
        sample = upper;
    }
    Ok(acc.finish())
}

/// Predict each target step with the value `season` steps earlier (taken
/// from the input window) and report metrics in original units. Requires
/// `horizon <= season <= lookback` so every looked-up step exists.
pub fn seasonal_naive_baseline<T: Scalar>(
    windows: &WindowSet<T>,
    season: usize,
    scaler: &Scaler,
) -> Result<Metrics, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::EmptyWindows);
    }
    let p = windows.lookback;
    let q = windows.horizon;
    let n = windows.num_nodes;
    let d = windows.num_channels;
    if season > p || season < q {
        return Err(TrainError::BadSeason {
            season,
            lookback: p,
        });
    }
    let mut acc = ErrorAccumulator::new();
    for s in 0..windows.len() {
        let input = windows.input(s);
        let mut pred = Vec::with_capacity(q * n);
        for h in 0..q {
            let step = p + h - season;
            for node in 0..n {
                pred.push(input[(step * n + node) * d].to_f64());
            }
        }
        let mut target: Vec<f64> = windows.target(s).iter().map(|v| v.to_f64()).collect();
        scaler.inverse_transform_target(&mut pred, n);
        scaler.inverse_transform_target(&mut target, n);
        for (a, b) in pred.iter().zip(target.iter()) {
            acc.push(a - b);
        }
    }
    Ok(acc.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fit_scaler, make_windows, transform, SpatioTemporalDataset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn periodic_ds(t: usize, period: usize) -> SpatioTemporalDataset {
        SpatioTemporalDataset::new(
            (0..t).map(|i| (i % period) as f64 + 1.0).collect(),
            (0..t as i64).map(|i| i * 3600).collect(),
            vec!["n".into()],
            1,
        )
        .unwrap()
    }

    #[test]
    fn metrics_match_hand_values() {
        // errors {1, 3}: MAE 2, RMSE sqrt(5)
        let mut acc = ErrorAccumulator::new();
        acc.push(1.0);
        acc.push(-3.0);
        let m = acc.finish();
        assert_eq!(m.mae, 2.0);
        assert!((m.rmse - 5.0f64.sqrt()).abs() < 1e-12);
        assert!((m.rmse - 2.23607).abs() < 1e-5);
    }

    #[test]
    fn rmse_never_below_mae() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..20);
            let mut acc = ErrorAccumulator::new();
            for _ in 0..n {
                acc.push(rng.gen_range(-10.0..10.0));
            }
            let m = acc.finish();
            assert!(m.rmse >= m.mae - 1e-12, "{} < {}", m.rmse, m.mae);
        }
    }

    #[test]
    fn seasonal_naive_is_exact_on_periodic_series() {
        let period = 6;
        let ds = periodic_ds(60, period);
        let scaler = fit_scaler(std::slice::from_ref(&ds)).unwrap();
        let standardized = transform(&ds, &scaler).unwrap();
        let windows: WindowSet<f64> =
            make_windows(std::slice::from_ref(&standardized), 8, 1).unwrap();
        let exact = seasonal_naive_baseline(&windows, period, &scaler).unwrap();
        assert!(exact.mae < 1e-9, "mae {}", exact.mae);
        // mismatched season misses the cycle
        let off = seasonal_naive_baseline(&windows, period - 1, &scaler).unwrap();
        assert!(off.mae > 0.5);
    }

    #[test]
    fn season_bounds_are_enforced() {
        let ds = periodic_ds(40, 5);
        let scaler = fit_scaler(std::slice::from_ref(&ds)).unwrap();
        let windows: WindowSet<f64> = make_windows(std::slice::from_ref(&ds), 6, 2).unwrap();
        assert!(matches!(
            seasonal_naive_baseline(&windows, 7, &scaler),
            Err(TrainError::BadSeason { .. })
        ));
        assert!(matches!(
            seasonal_naive_baseline(&windows, 1, &scaler),
            Err(TrainError::BadSeason { .. })
        ));
    }
}
