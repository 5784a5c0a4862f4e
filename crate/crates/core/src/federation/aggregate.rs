//! Uniform FedAvg.
//!
//! Weights are uniform on purpose: sample-count weighting would disclose
//! each client's data scale, which the privacy constraint forbids. Sums
//! accumulate in f64 and round once to the payload precision, so averaging
//! M identical bundles returns them bit-identically and the result matches
//! a 64-bit oracle to well under 1e-6. Callers fix the bundle order (by
//! client id) to pin the summation order.

use crate::model::ParamBundle;
use crate::scalar::Scalar;

use super::FedError;

/// Elementwise uniform mean of the bundles; manifests must be identical.
pub fn fedavg_aggregate<T: Scalar>(bundles: &[ParamBundle<T>]) -> Result<ParamBundle<T>, FedError> {
    let first = bundles.first().ok_or(FedError::NoClients)?;
    let manifest = first.manifest();
    for other in &bundles[1..] {
        manifest
            .check_matches(&other.manifest())
            .map_err(|e| FedError::Manifest {
                client: "aggregation input".into(),
                detail: e.to_string(),
            })?;
    }
    let scale = 1.0 / bundles.len() as f64;
    let mut out = first.clone();
    for (i, entry) in out.entries_mut().iter_mut().enumerate() {
        for j in 0..entry.values.len() {
            let mut acc = 0.0f64;
            for bundle in bundles {
                acc += bundle.entries()[i].values[j].to_f64();
            }
            entry.values[j] = T::from_f64(acc * scale);
        }
    }
    Ok(out)
}
