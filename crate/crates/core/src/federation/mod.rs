//! FedAvg federation with client-side validation.
//!
//! One round: the server distributes the global bundle, each client selects
//! which aggregated modules to adopt by minimizing local validation loss
//! over all eight module subsets, trains locally for a fixed number of
//! epochs, and sends its parameters back; the server averages them with
//! uniform weights and the cycle repeats. Clients never transmit anything
//! but parameter payloads and scalar round metadata.

mod aggregate;
mod codec;
mod message;
mod runtime;
mod transport;
mod validation;

pub use aggregate::fedavg_aggregate;
pub use codec::{deserialize_params, serialize_params};
pub use message::{read_frame, write_frame, Message, MessageKind};
pub use runtime::{
    run_federation, ClientData, ClientResult, ClientSetup, FederationConfig, FederationOutcome,
    RoundEpochRecord, TransportKind,
};
pub use transport::{inproc_pair, Connection, InProcConnection, SocketConnection};
pub use validation::{csv_validate, select_best, CsvOutcome};

use thiserror::Error;

use crate::model::{ModelError, ModuleId};
use crate::training::TrainError;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("no clients registered")]
    NoClients,
    #[error("duplicate client id {0}")]
    DuplicateClient(String),
    #[error("manifest mismatch for {client}: {detail}")]
    Manifest { client: String, detail: String },
    #[error("codec: {0}")]
    Codec(String),
    #[error("protocol: expected {want}, got {got}")]
    Protocol { want: String, got: String },
    #[error("client {client} failed: {detail}")]
    ClientFailure { client: String, detail: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("every candidate integration produced a non-finite validation loss")]
    AllCandidatesInvalid,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A subset of the three swappable modules, as a bitset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModuleSubset(u8);

impl ModuleSubset {
    pub const EMPTY: ModuleSubset = ModuleSubset(0);
    pub const FULL: ModuleSubset = ModuleSubset(0b111);

    fn bit(module: ModuleId) -> u8 {
        match module {
            ModuleId::Lstm => 0b001,
            ModuleId::Attention => 0b010,
            ModuleId::Agcrn => 0b100,
        }
    }

    pub fn contains(self, module: ModuleId) -> bool {
        self.0 & Self::bit(module) != 0
    }

    pub fn with(self, module: ModuleId) -> ModuleSubset {
        ModuleSubset(self.0 | Self::bit(module))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = ModuleId> {
        ModuleId::ALL.into_iter().filter(move |&m| self.contains(m))
    }

    /// All eight subsets in selection order: by size, then lexicographically
    /// by members with Lstm < Attention < Agcrn. Scanning this order with a
    /// strict minimum implements the tie-break rule (prefer smaller subsets,
    /// keep local parameters when indifferent).
    pub fn power_set() -> [ModuleSubset; 8] {
        let mut all: Vec<ModuleSubset> = (0u8..8).map(ModuleSubset).collect();
        all.sort_by_key(|s| {
            let members: Vec<usize> = ModuleId::ALL
                .iter()
                .enumerate()
                .filter(|(_, m)| s.contains(**m))
                .map(|(i, _)| i)
                .collect();
            (s.len(), members)
        });
        all.try_into().expect("exactly eight subsets")
    }
}

impl std::fmt::Display for ModuleSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        let mut first = true;
        for m in self.members() {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{m}")?;
            first = false;
        }
        write!(f, "}}")
    }
}

/// Per-round record of the client-side validation outcome: the loss table
/// over candidate integrations, the adopted subset, and the validation loss
/// after the round's local training.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// `(subset, validation loss)` in [`ModuleSubset::power_set`] order; all
    /// eight when validation ran, a single full-set entry in plain-FedAvg
    /// mode. Discarded (non-finite) candidates keep a NaN placeholder.
    pub subset_losses: Vec<(ModuleSubset, f64)>,
    pub chosen: ModuleSubset,
    pub post_train_val_loss: f64,
}

impl RoundLog {
    pub fn loss_of(&self, subset: ModuleSubset) -> Option<f64> {
        self.subset_losses
            .iter()
            .find(|(s, _)| *s == subset)
            .map(|(_, l)| *l)
    }

    /// Loss of the adopted candidate.
    pub fn chosen_loss(&self) -> f64 {
        self.loss_of(self.chosen).expect("chosen subset is tabled")
    }
}
