//! Shared fixtures for the integration suites.

use fedcast_core::data::{
    add_calendar_features, fit_scaler, generate_synthetic, make_windows, split_chronological,
    transform, SyntheticSpec,
};
use fedcast_core::federation::{ClientData, ClientSetup};
use fedcast_core::model::ModelConfig;
use fedcast_core::scalar::Scalar;

/// Small synthetic client: hourly-like data with a 12-step daily cycle.
#[allow(dead_code)] // not every integration suite federates
pub fn synthetic_client<T: Scalar>(
    id: &str,
    nodes: usize,
    steps: usize,
    seed: u64,
    lookback: usize,
    hidden: usize,
) -> ClientSetup<T> {
    let spec = SyntheticSpec {
        num_nodes: nodes,
        num_steps: steps,
        exog_channels: 0,
        seed,
        daily_period: 12,
        weekly_period: 60,
        noise_sd: 0.25,
        coupling: 0.2,
    };
    let ds = add_calendar_features(&generate_synthetic(&spec).unwrap());
    let model = ModelConfig {
        num_nodes: nodes,
        input_dim: 3,
        hidden_dim: hidden,
        embed_dim: hidden,
        num_heads: 1,
        lookback,
        horizon: 1,
    };
    let (train, val, test) =
        split_chronological(&ds, (0.7, 0.2, 0.1), model.lookback + model.horizon).unwrap();
    let scaler = fit_scaler(std::slice::from_ref(&train)).unwrap();
    let train = transform(&train, &scaler).unwrap();
    let val = transform(&val, &scaler).unwrap();
    let test = transform(&test, &scaler).unwrap();
    let data = ClientData {
        train: make_windows(std::slice::from_ref(&train), model.lookback, model.horizon).unwrap(),
        val: make_windows(std::slice::from_ref(&val), model.lookback, model.horizon).unwrap(),
        test: make_windows(std::slice::from_ref(&test), model.lookback, model.horizon).unwrap(),
        scaler,
    };
    ClientSetup {
        client_id: id.to_string(),
        model,
        data,
    }
}

/// Fresh directory under the target tmp area, unique per (suite, label).
#[allow(dead_code)] // not every integration suite writes files
pub fn scratch_dir(label: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("fedcast-test-{label}-{}", std::process::id()));
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
