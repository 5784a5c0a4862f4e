//! Report rendering: plain tabular text plus one machine-readable summary.
//!
//! Every renderer is a pure function of the run's results; floats use the
//! shortest round-trip representation, so files from equal runs are byte
//! identical.

use serde::{Deserialize, Serialize};

use crate::federation::{ModuleSubset, RoundLog};
use crate::model::ModuleId;
use crate::training::Metrics;

/// One client's evaluation row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub client: String,
    pub mae: f64,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_rmse: Option<f64>,
}

impl MetricsRow {
    pub fn new(client: &str, metrics: Metrics, baseline: Option<Metrics>) -> MetricsRow {
        MetricsRow {
            client: client.to_string(),
            mae: metrics.mae,
            rmse: metrics.rmse,
            naive_mae: baseline.map(|b| b.mae),
            naive_rmse: baseline.map(|b| b.rmse),
        }
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let with_baseline = rows.iter().any(|r| r.naive_mae.is_some());
    let mut out = String::from(if with_baseline {
        "client,mae,rmse,naive_mae,naive_rmse\n"
    } else {
        "client,mae,rmse\n"
    });
    for row in rows {
        if with_baseline {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.client,
                row.mae,
                row.rmse,
                row.naive_mae.map_or(String::new(), |v| v.to_string()),
                row.naive_rmse.map_or(String::new(), |v| v.to_string()),
            ));
        } else {
            out.push_str(&format!("{},{},{}\n", row.client, row.mae, row.rmse));
        }
    }
    out
}

/// `client,epoch,train_loss,val_loss` rows for local training.
pub fn local_history_csv(rows: &[(String, usize, f64, f64)]) -> String {
    let mut out = String::from("client,epoch,train_loss,val_loss\n");
    for (client, epoch, train, val) in rows {
        out.push_str(&format!("{client},{epoch},{train},{val}\n"));
    }
    out
}

/// `client,round,epoch,train_loss,val_loss` rows for federated training.
pub fn fed_history_csv(rows: &[(String, usize, usize, f64, f64)]) -> String {
    let mut out = String::from("client,round,epoch,train_loss,val_loss\n");
    for (client, round, epoch, train, val) in rows {
        out.push_str(&format!("{client},{round},{epoch},{train},{val}\n"));
    }
    out
}

/// Per-round validation summary: the adopted subset and its loss, the loss
/// of keeping local parameters, and the loss after local training.
pub fn rounds_csv(per_client: &[(String, Vec<RoundLog>)]) -> String {
    let mut out = String::from(
        "client,round,chosen,chosen_val_loss,keep_local_val_loss,post_train_val_loss\n",
    );
    for (client, logs) in per_client {
        for log in logs {
            let keep_local = log
                .loss_of(ModuleSubset::EMPTY)
                .map_or(String::new(), |v| v.to_string());
            out.push_str(&format!(
                "{client},{},{},{},{keep_local},{}\n",
                log.round,
                log.chosen,
                log.chosen_loss(),
                log.post_train_val_loss,
            ));
        }
    }
    out
}

/// The replacement map in tabular form: one row per (client, round) with a
/// boolean per module saying whether the aggregated parameters were adopted.
pub fn replacement_map_csv(per_client: &[(String, Vec<RoundLog>)]) -> String {
    let mut out = String::from("client,round,lstm_replaced,attention_replaced,agcrn_replaced\n");
    for (client, logs) in per_client {
        for log in logs {
            out.push_str(&format!(
                "{client},{},{},{},{}\n",
                log.round,
                log.chosen.contains(ModuleId::Lstm),
                log.chosen.contains(ModuleId::Attention),
                log.chosen.contains(ModuleId::Agcrn),
            ));
        }
    }
    out
}

/// Machine-readable run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub mode: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds_run: Option<usize>,
    pub clients: Vec<ClientSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientSummary {
    pub id: String,
    pub num_nodes: usize,
    pub mae: f64,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_mae: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub naive_rmse: Option<f64>,
    pub best_val_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_round: Option<usize>,
    pub best_epoch: usize,
}

pub fn summary_json(summary: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}
