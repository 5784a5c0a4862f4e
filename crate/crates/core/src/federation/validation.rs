//! Client-side validation: pick which aggregated modules to adopt.
//!
//! For every subset of {lstm, attention, agcrn} the client builds a
//! candidate bundle with those modules taken from the aggregated parameters
//! and the rest kept local, computes the full validation loss, and adopts
//! the argmin. The empty subset reproduces the local bundle and the full
//! subset the aggregated one, so the adopted candidate is never worse than
//! keeping local parameters.

use crate::data::WindowSet;
use crate::model::{ModelConfig, ParamBundle};
use crate::scalar::Scalar;
use crate::training::{validation_loss, LossKind};

use super::{FedError, ModuleSubset, RoundLog};

pub struct CsvOutcome<T> {
    pub integrated: ParamBundle<T>,
    pub log: RoundLog,
    /// Candidates discarded for producing non-finite losses.
    pub warnings: Vec<String>,
}

/// First subset (in power-set order) with the strictly smallest finite loss;
/// `None` when every entry is non-finite.
pub fn select_best(table: &[(ModuleSubset, f64)]) -> Option<ModuleSubset> {
    let mut best: Option<(ModuleSubset, f64)> = None;
    for &(subset, loss) in table {
        if !loss.is_finite() {
            continue;
        }
        match best {
            Some((_, current)) if loss >= current => {}
            _ => best = Some((subset, loss)),
        }
    }
    best.map(|(s, _)| s)
}

fn build_candidate<T: Scalar>(
    local: &ParamBundle<T>,
    aggregated: &ParamBundle<T>,
    subset: ModuleSubset,
) -> Result<ParamBundle<T>, FedError> {
    let mut candidate = local.clone();
    for module in subset.members() {
        candidate.replace_module(module, aggregated)?;
    }
    Ok(candidate)
}

/// Algorithm: enumerate all eight candidate integrations, table their
/// validation losses, adopt the argmin (ties resolved toward smaller
/// subsets, i.e. toward keeping local parameters).
pub fn csv_validate<T: Scalar>(
    model: &ModelConfig,
    local: &ParamBundle<T>,
    aggregated: &ParamBundle<T>,
    val: &WindowSet<T>,
    loss: LossKind,
    round: usize,
) -> Result<CsvOutcome<T>, FedError> {
    local
        .manifest()
        .check_matches(&aggregated.manifest())
        .map_err(|e| FedError::Manifest {
            client: "csv_validate".into(),
            detail: e.to_string(),
        })?;
    let mut table = Vec::with_capacity(8);
    let mut warnings = Vec::new();
    for subset in ModuleSubset::power_set() {
        let candidate = build_candidate(local, aggregated, subset)?;
        let loss_value = match validation_loss(model, &candidate, val, loss) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                warnings.push(format!("candidate {subset} discarded: loss {v}"));
                f64::NAN
            }
            Err(crate::training::TrainError::Tensor(e)) => {
                warnings.push(format!("candidate {subset} discarded: {e}"));
                f64::NAN
            }
            Err(e) => return Err(e.into()),
        };
        table.push((subset, loss_value));
    }
    let chosen = select_best(&table).ok_or(FedError::AllCandidatesInvalid)?;
    let integrated = build_candidate(local, aggregated, chosen)?;
    let log = RoundLog {
        round,
        subset_losses: table,
        chosen,
        post_train_val_loss: f64::NAN, // filled after local training
    };
    Ok(CsvOutcome {
        integrated,
        log,
        warnings,
    })
}
