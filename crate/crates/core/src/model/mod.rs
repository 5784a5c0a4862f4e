//! The forecaster: LSTM encoding, temporal attention, adaptive graph recurrence.
//!
//! A window of `lookback` steps over `N` nodes with `D` channels flows
//! through three stages: an LSTM encoder shared across nodes, multihead
//! attention over the temporal axis that produces per-step node embeddings,
//! and an adaptive graph-convolutional recurrent cell whose adjacency and
//! per-node weights are generated from those embeddings. A linear head maps
//! the last recurrent state to the `horizon x N` prediction.
//!
//! Parameters are grouped into exactly three swappable modules
//! ([`ModuleId`]): the post-LSTM projection lives in `Lstm` and the
//! prediction head in `Agcrn`, so every tensor belongs to one module. No
//! parameter shape depends on the node count, which is what lets clients
//! with different networks share one manifest.

mod agcrn;
mod attention;
mod lstm;

pub use agcrn::agcrn_forward;
pub use attention::multihead_attention;
pub use lstm::lstm_encode;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{Dtype, Scalar};
use crate::tensor::{Graph, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("parameter {0} missing from bundle")]
    MissingParam(String),
    #[error("parameter {0} has no gradient after backward")]
    MissingGrad(String),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    InputShape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("bundle manifests differ at {0}")]
    ManifestMismatch(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// The three swappable parameter groups; the granularity of client-side
/// validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModuleId {
    Lstm,
    Attention,
    Agcrn,
}

impl ModuleId {
    pub const ALL: [ModuleId; 3] = [ModuleId::Lstm, ModuleId::Attention, ModuleId::Agcrn];

    pub fn name(self) -> &'static str {
        match self {
            ModuleId::Lstm => "lstm",
            ModuleId::Attention => "attention",
            ModuleId::Agcrn => "agcrn",
        }
    }

    /// Module owning a parameter, from its dotted name prefix.
    pub fn from_param_name(name: &str) -> Option<ModuleId> {
        let prefix = name.split('.').next()?;
        Self::ALL.into_iter().find(|m| m.name() == prefix)
    }
}

impl std::fmt::Display for ModuleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Architecture hyperparameters.
///
/// `num_nodes` is client-local and never enters parameter shapes; two
/// configs that differ only in `num_nodes` produce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_nodes: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub lookback: usize,
    pub horizon: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fields = [
            ("num_nodes", self.num_nodes),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("num_heads", self.num_heads),
            ("lookback", self.lookback),
            ("horizon", self.horizon),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Parameter layout: canonical `(name, module, shape, is_weight)` entries.
///
/// The order here is the manifest order, the codec order and the gradient
/// order; everything downstream depends on it being stable.
fn layout(config: &ModelConfig) -> Vec<(String, ModuleId, Vec<usize>, bool)> {
    let d = config.input_dim;
    let dh = config.hidden_dim;
    let de = config.embed_dim;
    let heads = config.num_heads;
    let q = config.horizon;
    let mut entries = Vec::new();
    for gate in ["f", "i", "c", "o"] {
        entries.push((
            format!("lstm.w_{gate}"),
            ModuleId::Lstm,
            vec![d + dh, dh],
            true,
        ));
    }
    for gate in ["f", "i", "c", "o"] {
        entries.push((format!("lstm.b_{gate}"), ModuleId::Lstm, vec![dh], false));
    }
    entries.push(("lstm.w_proj".into(), ModuleId::Lstm, vec![dh, de], true));
    entries.push(("lstm.b_proj".into(), ModuleId::Lstm, vec![de], false));
    for k in 0..heads {
        entries.push((
            format!("attention.w_q.{k}"),
            ModuleId::Attention,
            vec![de, dh],
            true,
        ));
        entries.push((
            format!("attention.w_k.{k}"),
            ModuleId::Attention,
            vec![de, dh],
            true,
        ));
        entries.push((
            format!("attention.w_v.{k}"),
            ModuleId::Attention,
            vec![de, dh],
            true,
        ));
    }
    entries.push((
        "attention.w_o".into(),
        ModuleId::Attention,
        vec![heads * dh, de],
        true,
    ));
    for gate in ["reset", "update", "cand"] {
        entries.push((
            format!("agcrn.w_{gate}"),
            ModuleId::Agcrn,
            vec![de, d + dh, dh],
            true,
        ));
    }
    for gate in ["reset", "update", "cand"] {
        entries.push((
            format!("agcrn.b_{gate}"),
            ModuleId::Agcrn,
            vec![de, dh],
            false,
        ));
    }
    entries.push(("agcrn.w_out".into(), ModuleId::Agcrn, vec![dh, q], true));
    entries.push(("agcrn.b_out".into(), ModuleId::Agcrn, vec![q], false));
    entries
}

/// Ordered wire description of a bundle: names, shapes, element type.
///
/// Federation participants must agree on it byte for byte.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dtype: Dtype,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Manifest {
    pub fn for_config(config: &ModelConfig, dtype: Dtype) -> Manifest {
        Manifest {
            dtype,
            entries: layout(config)
                .into_iter()
                .map(|(name, _, shape, _)| ManifestEntry { name, shape })
                .collect(),
        }
    }

    /// Total number of parameter elements.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum()
    }

    /// Encoded size of the manifest header itself:
    /// 1 (dtype tag) + 4 (entry count) + per entry 2 + name_len + 1 + 4*ndim.
    pub fn encoded_len(&self) -> usize {
        1 + 4
            + self
                .entries
                .iter()
                .map(|e| 2 + e.name.len() + 1 + 4 * e.shape.len())
                .sum::<usize>()
    }

    /// Exact byte length of a serialized bundle with this manifest.
    pub fn payload_len(&self) -> usize {
        self.encoded_len() + self.param_count() * self.dtype.size_bytes()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.dtype.tag());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u16).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.shape.len() as u8);
            for &extent in &e.shape {
                out.extend_from_slice(&(extent as u32).to_le_bytes());
            }
        }
        debug_assert_eq!(out.len(), self.encoded_len());
        out
    }

    /// Parse an encoded manifest, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Manifest, usize), String> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], String> {
            let slice = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| format!("manifest truncated at byte {pos}", pos = *pos))?;
            *pos += n;
            Ok(slice)
        };
        let dtype = Dtype::from_tag(take(&mut pos, 1)?[0])
            .ok_or_else(|| "unknown dtype tag".to_string())?;
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if count > 1 << 20 {
            return Err(format!("implausible manifest entry count {count}"));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(&mut pos, name_len)?)
                .map_err(|_| "manifest name is not UTF-8".to_string())?
                .to_string();
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            entries.push(ManifestEntry { name, shape });
        }
        Ok((Manifest { dtype, entries }, pos))
    }

    /// FNV-1a digest of the encoded manifest; cheap compatibility check.
    pub fn digest(&self) -> u64 {
        let mut hash = 0xcbf29ce484222325u64;
        for byte in self.encode() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        hash
    }

    /// Error with the first divergent tensor name, if the manifests differ.
    pub fn check_matches(&self, other: &Manifest) -> Result<(), ModelError> {
        if self.dtype != other.dtype {
            return Err(ModelError::ManifestMismatch(format!(
                "dtype {} vs {}",
                self.dtype.name(),
                other.dtype.name()
            )));
        }
        for (a, b) in self.entries.iter().zip(other.entries.iter()) {
            if a.name != b.name {
                return Err(ModelError::ManifestMismatch(format!(
                    "{} vs {}",
                    a.name, b.name
                )));
            }
            if a.shape != b.shape {
                return Err(ModelError::ManifestMismatch(a.name.clone()));
            }
        }
        if self.entries.len() != other.entries.len() {
            return Err(ModelError::ManifestMismatch(format!(
                "entry count {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        Ok(())
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub module: ModuleId,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// Named parameters grouped by module: the unit FedAvg averages and
/// client-side validation swaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBundle<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamBundle<T> {
    /// Seeded initialization: weights uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`
    /// with fan_in the product of all but the last axis; biases zero.
    pub fn init(config: &ModelConfig, seed: u64) -> ParamBundle<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(config)
            .into_iter()
            .map(|(name, module, shape, is_weight)| {
                let count: usize = shape.iter().product();
                let values = if is_weight {
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..count)
                        .map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * bound))
                        .collect()
                } else {
                    vec![T::ZERO; count]
                };
                ParamEntry {
                    name,
                    module,
                    shape,
                    values,
                }
            })
            .collect();
        ParamBundle { entries }
    }

    pub fn from_entries(entries: Vec<ParamEntry<T>>) -> ParamBundle<T> {
        ParamBundle { entries }
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<T>> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            dtype: T::DTYPE,
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                })
                .collect(),
        }
    }

    /// Overwrite every tensor of `module` with the matching tensor of `source`.
    pub fn replace_module(
        &mut self,
        module: ModuleId,
        source: &ParamBundle<T>,
    ) -> Result<(), ModelError> {
        self.manifest().check_matches(&source.manifest())?;
        for (dst, src) in self.entries.iter_mut().zip(source.entries.iter()) {
            if dst.module == module {
                dst.values.clone_from(&src.values);
            }
        }
        Ok(())
    }

    /// Load the bundle onto a graph as leaf tensors, trainable or frozen.
    pub fn bind(&self, graph: &Graph<T>, trainable: bool) -> Result<BoundParams<T>, ModelError> {
        let mut names = Vec::with_capacity(self.entries.len());
        let mut map = HashMap::with_capacity(self.entries.len());
        for entry in &self.entries {
            let tensor = if trainable {
                graph.var(&entry.shape, entry.values.clone())?
            } else {
                graph.constant(&entry.shape, entry.values.clone())?
            };
            names.push(entry.name.clone());
            map.insert(entry.name.clone(), tensor);
        }
        Ok(BoundParams { names, map })
    }
}

/// A bundle's tensors living on a graph, looked up by canonical name.
pub struct BoundParams<T: Scalar> {
    names: Vec<String>,
    map: HashMap<String, Tensor<T>>,
}

impl<T: Scalar> BoundParams<T> {
    /// Assemble from parallel name/tensor lists (used by gradient-check
    /// harnesses that create the leaves themselves).
    pub fn from_tensors(names: Vec<String>, tensors: Vec<Tensor<T>>) -> BoundParams<T> {
        let map = names.iter().cloned().zip(tensors).collect();
        BoundParams { names, map }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, ModelError> {
        self.map
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Gradients in bundle order; every parameter must have one.
    pub fn collect_grads(&self) -> Result<Vec<Vec<T>>, ModelError> {
        self.names
            .iter()
            .map(|name| {
                self.map[name]
                    .grad()
                    .ok_or_else(|| ModelError::MissingGrad(name.clone()))
            })
            .collect()
    }
}

/// Full forward pass: LSTM encoding, temporal attention, adaptive graph
/// recurrence, linear head. Pure in `(window, params)`; the result has shape
/// `(horizon, num_nodes)` on the standardized scale.
pub fn model_forward<T: Scalar>(
    window: &Tensor<T>,
    params: &BoundParams<T>,
    config: &ModelConfig,
) -> Result<Tensor<T>, ModelError> {
    let encoded = lstm_encode(window, params, config)?;
    let embeds = multihead_attention(&encoded, params, config)?;
    agcrn_forward(window, &embeds, params, config)
}

/// Closed-form parameter count and exact serialized payload size in bytes.
///
/// The payload is the encoded manifest (see [`Manifest::encoded_len`])
/// followed by `count` little-endian elements.
pub fn param_count(config: &ModelConfig, dtype: Dtype) -> (usize, usize) {
    let d = config.input_dim;
    let dh = config.hidden_dim;
    let de = config.embed_dim;
    let heads = config.num_heads;
    let q = config.horizon;
    let lstm = 4 * (d + dh) * dh + 4 * dh + dh * de + de;
    let attention = heads * 3 * de * dh + heads * dh * de;
    let agcrn = 3 * de * (d + dh) * dh + 3 * de * dh + dh * q + q;
    let count = lstm + attention + agcrn;
    let manifest = Manifest::for_config(config, dtype);
    debug_assert_eq!(count, manifest.param_count());
    (count, manifest.payload_len())
}
