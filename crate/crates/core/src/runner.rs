//! Command entry points behind the `fedcast` binary.
//!
//! All production runs execute at 32-bit precision; the 64-bit path exists
//! for gradient-check oracles, not for the CLI. Every artifact a command
//! writes is a pure function of (config, seed) in in-process mode.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ClientSection, Mode, RunConfig};
use crate::data::{
    add_calendar_features, fit_scaler, generate_synthetic, load_csv_segmented, make_windows,
    split_chronological, transform, write_csv, CsvSchema, SpatioTemporalDataset,
};
use crate::federation::{
    deserialize_params, run_federation, serialize_params, ClientData, ClientSetup,
    FederationConfig, FederationOutcome,
};
use crate::model::{Manifest, ModelConfig, ParamBundle};
use crate::report::{
    fed_history_csv, local_history_csv, metrics_csv, replacement_map_csv, rounds_csv, summary_json,
    ClientSummary, MetricsRow, RunSummary,
};
use crate::scalar::Scalar;
use crate::training::{evaluate, seasonal_naive_baseline, train_local, Metrics};

/// Working precision of CLI runs.
pub type RunFloat = f32;

#[derive(Debug)]
pub enum RunError {
    /// Anything wrong with the configuration or referenced inputs (exit 1).
    Config(String),
    /// Failures during execution (exit 2).
    Runtime(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(msg) => write!(f, "config error: {msg}"),
            RunError::Runtime(msg) => write!(f, "runtime error: {msg}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<crate::config::ConfigError> for RunError {
    fn from(e: crate::config::ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

macro_rules! runtime_from {
    ($($ty:ty),*) => {$(
        impl From<$ty> for RunError {
            fn from(e: $ty) -> Self {
                RunError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(
    crate::data::DataError,
    crate::training::TrainError,
    crate::federation::FedError,
    crate::model::ModelError,
    std::io::Error
);

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: RunSummary,
}

pub struct FedRun {
    pub artifacts: RunArtifacts,
    pub outcome: FederationOutcome<RunFloat>,
}

/// A client's data pipeline output plus anything worth telling the user.
pub struct PreparedClient {
    pub setup: ClientSetup<RunFloat>,
    pub notes: Vec<String>,
}

fn client_blocks(
    section: &ClientSection,
    notes: &mut Vec<String>,
) -> Result<Vec<SpatioTemporalDataset>, RunError> {
    match (&section.synthetic, &section.csv) {
        (Some(synth), None) => Ok(vec![generate_synthetic(&synth.to_spec())?]),
        (None, Some(csv)) => {
            let (blocks, report) = load_csv_segmented(&csv.path, &csv.schema(), &csv.segments)?;
            if report.missing_cells > 0 {
                notes.push(format!(
                    "client {}: {} of {} cells missing ({:.2}%), zero-filled",
                    section.id,
                    report.missing_cells,
                    report.total_cells,
                    report.missing_fraction() * 100.0
                ));
            }
            Ok(blocks)
        }
        _ => Err(RunError::Config(format!(
            "client {} must have exactly one data source",
            section.id
        ))),
    }
}

/// Source to window sets: generate or load, add calendar channels, split
/// chronologically per block, standardize with train statistics, window.
pub fn prepare_client(
    cfg: &RunConfig,
    section: &ClientSection,
) -> Result<PreparedClient, RunError> {
    let mut notes = Vec::new();
    let mut blocks = client_blocks(section, &mut notes)?;
    if cfg.data.calendar_features {
        blocks = blocks.iter().map(add_calendar_features).collect();
    }
    let channels = blocks[0].num_channels();
    if channels != cfg.model.input_dim {
        return Err(RunError::Config(format!(
            "client {}: data has {channels} channels but model.input_dim is {}",
            section.id, cfg.model.input_dim
        )));
    }
    let model = cfg.model.instantiate(blocks[0].num_nodes());
    model.validate()?;
    let need = model.lookback + model.horizon;
    let fractions = (cfg.data.split[0], cfg.data.split[1], cfg.data.split[2]);
    let mut train_blocks = Vec::new();
    let mut val_blocks = Vec::new();
    let mut test_blocks = Vec::new();
    for block in &blocks {
        let (train, val, test) = split_chronological(block, fractions, need)?;
        train_blocks.push(train);
        val_blocks.push(val);
        test_blocks.push(test);
    }
    let scaler = fit_scaler(&train_blocks)?;
    for (node, channel) in &scaler.clamped {
        notes.push(format!(
            "client {}: zero variance at node {node} channel {channel}; std clamped to 1",
            section.id
        ));
    }
    let standardize = |blocks: &[SpatioTemporalDataset]| -> Result<Vec<_>, RunError> {
        blocks
            .iter()
            .map(|b| transform(b, &scaler).map_err(RunError::from))
            .collect()
    };
    let train_std = standardize(&train_blocks)?;
    let val_std = standardize(&val_blocks)?;
    let test_std = standardize(&test_blocks)?;
    let data = ClientData {
        train: make_windows(&train_std, model.lookback, model.horizon)?,
        val: make_windows(&val_std, model.lookback, model.horizon)?,
        test: make_windows(&test_std, model.lookback, model.horizon)?,
        scaler,
    };
    Ok(PreparedClient {
        setup: ClientSetup {
            client_id: section.id.clone(),
            model,
            data,
        },
        notes,
    })
}

fn write_text(dir: &Path, name: &str, content: &str) -> Result<PathBuf, RunError> {
    let path = dir.join(name);
    std::fs::write(&path, content)?;
    Ok(path)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FCKP";
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub client: String,
    pub val_loss: f64,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    pub model: ModelConfig,
}

/// Checkpoint file: magic, version, JSON metadata, parameter payload.
pub fn write_checkpoint(
    path: &Path,
    meta: &CheckpointMeta,
    params: &ParamBundle<RunFloat>,
) -> Result<(), RunError> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    let meta_json = serde_json::to_vec(meta).expect("meta serializes");
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&serialize_params(params));
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointMeta, ParamBundle<RunFloat>), RunError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..4] != CHECKPOINT_MAGIC || bytes[4] != CHECKPOINT_VERSION {
        return Err(RunError::Runtime(format!(
            "{} is not a version-{CHECKPOINT_VERSION} checkpoint",
            path.display()
        )));
    }
    let meta_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let meta_end = 9 + meta_len;
    if bytes.len() < meta_end {
        return Err(RunError::Runtime(format!(
            "{}: truncated checkpoint metadata",
            path.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[9..meta_end])
        .map_err(|e| RunError::Runtime(format!("{}: bad metadata: {e}", path.display())))?;
    let params = deserialize_params(&bytes[meta_end..])
        .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((meta, params))
}

fn baseline_for(cfg: &RunConfig, prepared: &PreparedClient) -> Result<Option<Metrics>, RunError> {
    match cfg.evaluate.baseline_season {
        Some(season) => Ok(Some(seasonal_naive_baseline(
            &prepared.setup.data.test,
            season,
            &prepared.setup.data.scaler,
        )?)),
        None => Ok(None),
    }
}

fn print_notes(notes: &[String]) {
    for note in notes {
        eprintln!("note: {note}");
    }
}

/// Write one long-format CSV dataset per synthetic client.
pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>, RunError> {
    cfg.validate(Mode::Generate)?;
    let dir = cfg.out_dir.join("data");
    std::fs::create_dir_all(&dir)?;
    let mut files = Vec::new();
    for client in &cfg.clients {
        let Some(synth) = &client.synthetic else {
            continue;
        };
        let ds = generate_synthetic(&synth.to_spec())?;
        let schema = CsvSchema {
            time_col: "timestamp".into(),
            node_col: "node".into(),
            value_col: "value".into(),
            exog_cols: (0..synth.exog_channels)
                .map(|i| format!("exog{i}"))
                .collect(),
        };
        let path = dir.join(format!("{}.csv", client.id));
        write_csv(&ds, &schema, &path)?;
        files.push(path);
    }
    if files.is_empty() {
        return Err(RunError::Config(
            "no synthetic clients: nothing to generate".into(),
        ));
    }
    Ok(files)
}

/// Per client: preprocess, train locally, restore the best checkpoint,
/// evaluate on the test split, persist metrics, loss curves and checkpoint.
pub fn cmd_train_local(cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    cfg.validate(Mode::TrainLocal)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let train_cfg = cfg.train.to_train_config(cfg.seed);
    let mut rows = Vec::new();
    let mut history_rows = Vec::new();
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    for client in &cfg.clients {
        let prepared = prepare_client(cfg, client)?;
        print_notes(&prepared.notes);
        let model = prepared.setup.model.clone();
        let params: ParamBundle<RunFloat> = ParamBundle::init(&model, cfg.seed);
        let outcome = train_local(
            &model,
            params,
            &prepared.setup.data.train,
            &prepared.setup.data.val,
            &train_cfg,
        )?;
        for record in &outcome.history {
            history_rows.push((
                client.id.clone(),
                record.epoch,
                record.train_loss,
                record.val_loss,
            ));
        }
        let metrics = evaluate(
            &model,
            &outcome.best.params,
            &prepared.setup.data.test,
            &prepared.setup.data.scaler,
        )?;
        let baseline = baseline_for(cfg, &prepared)?;
        rows.push(MetricsRow::new(&client.id, metrics, baseline));
        let ckpt_path = cfg.out_dir.join(format!("{}.ckpt", client.id));
        write_checkpoint(
            &ckpt_path,
            &CheckpointMeta {
                client: client.id.clone(),
                val_loss: outcome.best.val_loss,
                epoch: outcome.best.epoch,
                round: None,
                model: model.clone(),
            },
            &outcome.best.params,
        )?;
        files.push(ckpt_path);
        summaries.push(ClientSummary {
            id: client.id.clone(),
            num_nodes: model.num_nodes,
            mae: metrics.mae,
            rmse: metrics.rmse,
            naive_mae: baseline.map(|b| b.mae),
            naive_rmse: baseline.map(|b| b.rmse),
            best_val_loss: outcome.best.val_loss,
            best_round: None,
            best_epoch: outcome.best.epoch,
        });
    }
    files.push(write_text(
        &cfg.out_dir,
        "metrics.csv",
        &metrics_csv(&rows),
    )?);
    files.push(write_text(
        &cfg.out_dir,
        "history.csv",
        &local_history_csv(&history_rows),
    )?);
    let summary = RunSummary {
        schema_version: 1,
        mode: Mode::TrainLocal.to_string(),
        seed: cfg.seed,
        rounds_run: None,
        clients: summaries,
    };
    files.push(write_text(
        &cfg.out_dir,
        "summary.json",
        &summary_json(&summary),
    )?);
    Ok(RunArtifacts {
        out_dir: cfg.out_dir.clone(),
        files,
        summary,
    })
}

/// Run the federation and emit metrics, loss curves, the per-round
/// validation table and the replacement map.
pub fn cmd_train_fed(cfg: &RunConfig) -> Result<FedRun, RunError> {
    cfg.validate(Mode::TrainFed)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let transport = cfg.federation.transport_kind()?;
    let fed = FederationConfig {
        rounds: cfg.federation.rounds,
        local_epochs: cfg.federation.local_epochs,
        csv_enabled: cfg.federation.csv_enabled,
        early_stop_rounds: cfg.federation.early_stop_rounds,
        init_seed: cfg.seed,
        train: cfg.train.to_train_config(cfg.seed),
    };
    struct EvalView {
        model: ModelConfig,
        scaler: crate::data::Scaler,
        test: crate::data::WindowSet<RunFloat>,
    }
    let mut setups = Vec::new();
    let mut views = std::collections::BTreeMap::new();
    for client in &cfg.clients {
        let prepared = prepare_client(cfg, client)?;
        print_notes(&prepared.notes);
        views.insert(
            client.id.clone(),
            EvalView {
                model: prepared.setup.model.clone(),
                scaler: prepared.setup.data.scaler.clone(),
                test: prepared.setup.data.test.clone(),
            },
        );
        setups.push(prepared.setup);
    }
    let outcome = run_federation(setups, &fed, &transport)?;

    let mut rows = Vec::new();
    let mut history_rows = Vec::new();
    let mut log_rows = Vec::new();
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    for client in &outcome.clients {
        print_notes(&client.warnings);
        let view = &views[&client.client_id];
        let baseline = match cfg.evaluate.baseline_season {
            Some(season) => Some(seasonal_naive_baseline(&view.test, season, &view.scaler)?),
            None => None,
        };
        rows.push(MetricsRow::new(
            &client.client_id,
            client.test_metrics,
            baseline,
        ));
        for record in &client.history {
            history_rows.push((
                client.client_id.clone(),
                record.round,
                record.epoch,
                record.train_loss,
                record.val_loss,
            ));
        }
        log_rows.push((client.client_id.clone(), client.round_logs.clone()));
        let ckpt_path = cfg.out_dir.join(format!("{}.ckpt", client.client_id));
        write_checkpoint(
            &ckpt_path,
            &CheckpointMeta {
                client: client.client_id.clone(),
                val_loss: client.best.val_loss,
                epoch: client.best.epoch,
                round: client.best.round,
                model: view.model.clone(),
            },
            &client.best.params,
        )?;
        files.push(ckpt_path);
        summaries.push(ClientSummary {
            id: client.client_id.clone(),
            num_nodes: view.model.num_nodes,
            mae: client.test_metrics.mae,
            rmse: client.test_metrics.rmse,
            naive_mae: baseline.map(|b| b.mae),
            naive_rmse: baseline.map(|b| b.rmse),
            best_val_loss: client.best.val_loss,
            best_round: client.best.round,
            best_epoch: client.best.epoch,
        });
    }
    files.push(write_text(
        &cfg.out_dir,
        "metrics.csv",
        &metrics_csv(&rows),
    )?);
    files.push(write_text(
        &cfg.out_dir,
        "history.csv",
        &fed_history_csv(&history_rows),
    )?);
    files.push(write_text(
        &cfg.out_dir,
        "rounds.csv",
        &rounds_csv(&log_rows),
    )?);
    files.push(write_text(
        &cfg.out_dir,
        "replacement_map.csv",
        &replacement_map_csv(&log_rows),
    )?);
    let summary = RunSummary {
        schema_version: 1,
        mode: Mode::TrainFed.to_string(),
        seed: cfg.seed,
        rounds_run: Some(outcome.rounds_run),
        clients: summaries,
    };
    files.push(write_text(
        &cfg.out_dir,
        "summary.json",
        &summary_json(&summary),
    )?);
    Ok(FedRun {
        artifacts: RunArtifacts {
            out_dir: cfg.out_dir.clone(),
            files,
            summary,
        },
        outcome,
    })
}

/// Evaluate saved checkpoints on each client's test split, in original
/// units, with the optional seasonal-naive baseline alongside.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<RunArtifacts, RunError> {
    cfg.validate(Mode::Evaluate)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let ckpt_dir = cfg
        .evaluate
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir.clone());
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut files = Vec::new();
    for client in &cfg.clients {
        let prepared = prepare_client(cfg, client)?;
        print_notes(&prepared.notes);
        let model = prepared.setup.model.clone();
        let path = ckpt_dir.join(format!("{}.ckpt", client.id));
        let (meta, params) = read_checkpoint(&path)?;
        let expected = Manifest::for_config(&model, RunFloat::DTYPE);
        params
            .manifest()
            .check_matches(&expected)
            .map_err(|e| RunError::Runtime(format!("{}: {e}", path.display())))?;
        let metrics = evaluate(
            &model,
            &params,
            &prepared.setup.data.test,
            &prepared.setup.data.scaler,
        )?;
        let baseline = baseline_for(cfg, &prepared)?;
        rows.push(MetricsRow::new(&client.id, metrics, baseline));
        summaries.push(ClientSummary {
            id: client.id.clone(),
            num_nodes: model.num_nodes,
            mae: metrics.mae,
            rmse: metrics.rmse,
            naive_mae: baseline.map(|b| b.mae),
            naive_rmse: baseline.map(|b| b.rmse),
            best_val_loss: meta.val_loss,
            best_round: meta.round,
            best_epoch: meta.epoch,
        });
    }
    files.push(write_text(
        &cfg.out_dir,
        "metrics.csv",
        &metrics_csv(&rows),
    )?);
    let summary = RunSummary {
        schema_version: 1,
        mode: Mode::Evaluate.to_string(),
        seed: cfg.seed,
        rounds_run: None,
        clients: summaries,
    };
    files.push(write_text(
        &cfg.out_dir,
        "summary.json",
        &summary_json(&summary),
    )?);
    Ok(RunArtifacts {
        out_dir: cfg.out_dir.clone(),
        files,
        summary,
    })
}
