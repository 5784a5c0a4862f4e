//! Run configuration: one structured TOML file, versioned, plus the few
//! scalar overrides the command line may apply.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CsvSchema, SyntheticSpec};
use crate::federation::TransportKind;
use crate::model::ModelConfig;
use crate::training::{LossKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Generate,
    TrainLocal,
    TrainFed,
    Evaluate,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Generate => "generate",
            Mode::TrainLocal => "train-local",
            Mode::TrainFed => "train-fed",
            Mode::Evaluate => "evaluate",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Optional; when present it must match the invoked subcommand.
    #[serde(default)]
    pub mode: Option<Mode>,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
    pub clients: Vec<ClientSection>,
}

fn default_seed() -> u64 {
    42
}

/// Architecture dimensions; the node count is never configured, it comes
/// from each client's data.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub input_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default = "one")]
    pub num_heads: usize,
    #[serde(default = "default_lookback")]
    pub lookback: usize,
    #[serde(default = "one")]
    pub horizon: usize,
}

fn one() -> usize {
    1
}

fn default_lookback() -> usize {
    12
}

impl ModelSection {
    /// Instantiate for a client once its node count is known; the embedding
    /// dimension defaults to the hidden dimension.
    pub fn instantiate(&self, num_nodes: usize) -> ModelConfig {
        ModelConfig {
            num_nodes,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim.unwrap_or(self.hidden_dim),
            num_heads: self.num_heads,
            lookback: self.lookback,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    10
}
fn default_loss() -> LossKind {
    LossKind::Mae
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            loss: default_loss(),
            clip_norm: None,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            loss: self.loss,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_transport")]
    pub transport: String,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default)]
    pub port: u16,
    #[serde(default = "default_true")]
    pub csv_enabled: bool,
    #[serde(default = "default_patience")]
    pub early_stop_rounds: usize,
}

fn default_rounds() -> usize {
    50
}
fn default_local_epochs() -> usize {
    6
}
fn default_transport() -> String {
    "inproc".into()
}
fn default_host() -> String {
    "127.0.0.1".into()
}
fn default_true() -> bool {
    true
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            rounds: default_rounds(),
            local_epochs: default_local_epochs(),
            transport: default_transport(),
            host: default_host(),
            port: 0,
            csv_enabled: true,
            early_stop_rounds: default_patience(),
        }
    }
}

impl FederationSection {
    pub fn transport_kind(&self) -> Result<TransportKind, ConfigError> {
        match self.transport.as_str() {
            "inproc" => Ok(TransportKind::InProc),
            "socket" => Ok(TransportKind::Socket {
                host: self.host.clone(),
                port: self.port,
            }),
            other => Err(ConfigError::Invalid(format!(
                "transport must be inproc or socket, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default = "default_true")]
    pub calendar_features: bool,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
}

fn default_split() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            calendar_features: true,
            split: default_split(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Directory holding `<client>.ckpt` files (defaults to `out_dir`).
    #[serde(default)]
    pub checkpoint_dir: Option<PathBuf>,
    /// When set, the seasonal-naive baseline with this season is emitted
    /// alongside the model metrics.
    #[serde(default)]
    pub baseline_season: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientSection {
    pub id: String,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default)]
    pub csv: Option<CsvSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub nodes: usize,
    pub steps: usize,
    #[serde(default = "two")]
    pub exog_channels: usize,
    pub seed: u64,
    #[serde(default = "default_daily")]
    pub daily_period: usize,
    #[serde(default = "default_weekly")]
    pub weekly_period: usize,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default = "default_coupling")]
    pub coupling: f64,
}

fn two() -> usize {
    2
}
fn default_daily() -> usize {
    24
}
fn default_weekly() -> usize {
    168
}
fn default_noise() -> f64 {
    0.3
}
fn default_coupling() -> f64 {
    0.2
}

impl SyntheticSection {
    pub fn to_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_nodes: self.nodes,
            num_steps: self.steps,
            exog_channels: self.exog_channels,
            seed: self.seed,
            daily_period: self.daily_period,
            weekly_period: self.weekly_period,
            noise_sd: self.noise_sd,
            coupling: self.coupling,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    pub path: PathBuf,
    #[serde(default = "default_time_col")]
    pub time_col: String,
    #[serde(default = "default_node_col")]
    pub node_col: String,
    #[serde(default = "default_value_col")]
    pub value_col: String,
    #[serde(default)]
    pub exog_cols: Vec<String>,
    /// ISO-8601 timestamps opening each recording segment after the first
    /// (disjoint months are split here, then windowed per segment).
    #[serde(default)]
    pub segments: Vec<String>,
}

fn default_time_col() -> String {
    "timestamp".into()
}
fn default_node_col() -> String {
    "node".into()
}
fn default_value_col() -> String {
    "value".into()
}

impl CsvSection {
    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            time_col: self.time_col.clone(),
            node_col: self.node_col.clone(),
            value_col: self.value_col.clone(),
            exog_cols: self.exog_cols.clone(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(toml::from_str(&text)?)
    }

    /// Command-line overrides for scalar fields.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        transport: Option<&str>,
        no_csv: bool,
        out: Option<PathBuf>,
    ) {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(transport) = transport {
            self.federation.transport = transport.to_string();
        }
        if no_csv {
            self.federation.csv_enabled = false;
        }
        if let Some(out) = out {
            self.out_dir = out;
        }
    }

    /// Everything checkable before touching data or spawning workers.
    pub fn validate(&self, mode: Mode) -> Result<(), ConfigError> {
        if self.schema_version != 1 {
            return Err(ConfigError::Invalid(format!(
                "unsupported schema_version {} (expected 1)",
                self.schema_version
            )));
        }
        if let Some(declared) = self.mode {
            if declared != mode {
                return Err(ConfigError::Invalid(format!(
                    "config declares mode {declared}, invoked as {mode}"
                )));
            }
        }
        // a probe instantiation checks the dimensions
        let probe = self.model.instantiate(1);
        probe
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train
            .to_train_config(self.seed)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let split_sum: f64 = self.data.split.iter().sum();
        if (split_sum - 1.0).abs() > 1e-9 || self.data.split.iter().any(|&f| f <= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "split fractions must be positive and sum to 1, got {:?}",
                self.data.split
            )));
        }
        if self.clients.is_empty() {
            return Err(ConfigError::Invalid("no clients configured".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for client in &self.clients {
            if !ids.insert(&client.id) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate client id {}",
                    client.id
                )));
            }
            match (&client.synthetic, &client.csv) {
                (Some(_), Some(_)) | (None, None) => {
                    return Err(ConfigError::Invalid(format!(
                        "client {} must have exactly one of [clients.synthetic] or [clients.csv]",
                        client.id
                    )))
                }
                (Some(synth), None) => {
                    synth
                        .to_spec()
                        .validate()
                        .map_err(|e| ConfigError::Invalid(format!("client {}: {e}", client.id)))?;
                    self.check_channels(&client.id, synth.exog_channels)?;
                    // every chronological split must hold a full window
                    let need = self.model.lookback + self.model.horizon;
                    let t = synth.steps as f64;
                    let first = (t * self.data.split[0] + 1e-9).floor() as usize;
                    let second =
                        (t * (self.data.split[0] + self.data.split[1]) + 1e-9).floor() as usize;
                    for (name, len) in [
                        ("train", first),
                        ("validation", second - first),
                        ("test", synth.steps - second),
                    ] {
                        if len < need {
                            return Err(ConfigError::Invalid(format!(
                                "client {}: {name} split of {len} steps cannot hold a window of {need}",
                                client.id
                            )));
                        }
                    }
                }
                (None, Some(csv)) => {
                    if mode != Mode::Generate && !csv.path.exists() {
                        return Err(ConfigError::Invalid(format!(
                            "client {}: CSV path {} does not exist",
                            client.id,
                            csv.path.display()
                        )));
                    }
                    self.check_channels(&client.id, csv.exog_cols.len())?;
                }
            }
        }
        if mode == Mode::TrainFed {
            self.federation.transport_kind()?;
            if self.federation.rounds == 0 {
                return Err(ConfigError::Invalid(
                    "federation.rounds must be >= 1".into(),
                ));
            }
        }
        if let Some(season) = self.evaluate.baseline_season {
            if season > self.model.lookback || season < self.model.horizon {
                return Err(ConfigError::Invalid(format!(
                    "baseline_season {season} must satisfy horizon <= season <= lookback"
                )));
            }
        }
        Ok(())
    }

    fn check_channels(&self, client: &str, exog: usize) -> Result<(), ConfigError> {
        let channels = 1 + exog + if self.data.calendar_features { 2 } else { 0 };
        if channels != self.model.input_dim {
            return Err(ConfigError::Invalid(format!(
                "client {client}: data provides {channels} channels (target + {exog} exogenous{}) but model.input_dim is {}",
                if self.data.calendar_features {
                    " + 2 calendar"
                } else {
                    ""
                },
                self.model.input_dim
            )));
        }
        Ok(())
    }
}
