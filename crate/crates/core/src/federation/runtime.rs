//! The round loop: distribute, validate, train, collect, aggregate.
//!
//! The server is a single coordinator; each client runs in its own worker
//! thread and owns its graph, data and parameters. The only synchronization
//! point is the per-round barrier at the server, which orders contributions
//! by client id so the aggregation's floating-point summation order is
//! fixed. A dropped or timed-out client aborts the round with a diagnostic;
//! there is no partial aggregation.

use std::collections::BTreeMap;
use std::net::{TcpListener, TcpStream};

use crate::data::Scaler;
use crate::data::WindowSet;
use crate::model::{Manifest, ModelConfig, ParamBundle};
use crate::scalar::Scalar;
use crate::training::{
    evaluate, train_local_offset, validation_loss, Checkpoint, Metrics, TrainConfig,
};

use super::codec::{deserialize_params, serialize_params};
use super::message::{Message, MessageKind};
use super::transport::{inproc_pair, Connection, SocketConnection};
use super::validation::csv_validate;
use super::{fedavg_aggregate, FedError, ModuleSubset, RoundLog};

#[derive(Debug, Clone, PartialEq)]
pub enum TransportKind {
    InProc,
    /// TCP on `host:port`; port 0 binds an ephemeral port.
    Socket {
        host: String,
        port: u16,
    },
}

#[derive(Debug, Clone)]
pub struct FederationConfig {
    /// Maximum number of rounds (R_max).
    pub rounds: usize,
    /// Local epochs per round (E_m).
    pub local_epochs: usize,
    /// Client-side validation on; off means plain FedAvg (always adopt all).
    pub csv_enabled: bool,
    /// Stop after this many consecutive rounds in which no client's best
    /// validation loss improved; 0 disables early stopping.
    pub early_stop_rounds: usize,
    /// Seed for the server's initial global bundle.
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            rounds: 50,
            local_epochs: 6,
            csv_enabled: true,
            early_stop_rounds: 10,
            init_seed: 42,
            train: TrainConfig::default(),
        }
    }
}

/// A client's private, already standardized data.
pub struct ClientData<T> {
    pub train: WindowSet<T>,
    pub val: WindowSet<T>,
    pub test: WindowSet<T>,
    pub scaler: Scaler,
}

pub struct ClientSetup<T> {
    pub client_id: String,
    pub model: ModelConfig,
    pub data: ClientData<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundEpochRecord {
    pub round: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

pub struct ClientResult<T> {
    pub client_id: String,
    /// Best checkpoint across all rounds (restored before test evaluation).
    pub best: Checkpoint<T>,
    /// Parameters after the final round's local training.
    pub final_params: ParamBundle<T>,
    pub round_logs: Vec<RoundLog>,
    pub history: Vec<RoundEpochRecord>,
    /// Best validation loss at the end of each round (non-increasing).
    pub best_val_by_round: Vec<f64>,
    pub test_metrics: Metrics,
    /// Candidates discarded during validation (non-finite losses).
    pub warnings: Vec<String>,
}

pub struct FederationOutcome<T> {
    /// Per-client results, sorted by client id.
    pub clients: Vec<ClientResult<T>>,
    pub rounds_run: usize,
}

fn client_loop<T: Scalar>(
    setup: ClientSetup<T>,
    mut conn: Box<dyn Connection>,
    fed: &FederationConfig,
) -> Result<ClientResult<T>, FedError> {
    let ClientSetup {
        client_id,
        model,
        data,
    } = setup;
    let manifest = Manifest::for_config(&model, T::DTYPE);
    conn.send(&Message {
        kind: MessageKind::Hello,
        round: 0,
        sender: client_id.clone(),
        digest: manifest.digest(),
        val_loss: None,
        payload: manifest.encode(),
    })?;

    let mut params: Option<ParamBundle<T>> = None;
    let mut best: Option<Checkpoint<T>> = None; // starts as "infinity"
    let mut round_logs: Vec<RoundLog> = Vec::new();
    let mut history: Vec<RoundEpochRecord> = Vec::new();
    let mut best_val_by_round: Vec<f64> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut next_round = 0usize;

    loop {
        let msg = conn.recv()?;
        match msg.kind {
            MessageKind::GlobalParams => {
                let round = msg.round;
                if round != next_round {
                    return Err(FedError::Protocol {
                        want: format!("GLOBAL_PARAMS round {next_round}"),
                        got: format!("GLOBAL_PARAMS round {round}"),
                    });
                }
                next_round += 1;
                let global: ParamBundle<T> = deserialize_params(&msg.payload)?;
                global
                    .manifest()
                    .check_matches(&manifest)
                    .map_err(|e| FedError::Manifest {
                        client: client_id.clone(),
                        detail: e.to_string(),
                    })?;

                let (integrated, mut log) = if let (Some(local), true) = (&params, fed.csv_enabled)
                {
                    let out =
                        csv_validate(&model, local, &global, &data.val, fed.train.loss, round)?;
                    warnings.extend(out.warnings);
                    (out.integrated, out.log)
                } else if params.is_none() {
                    // first round: adopt the distributed bundle outright,
                    // validation is trivial because local == global
                    let loss = validation_loss(&model, &global, &data.val, fed.train.loss)?;
                    let (table, chosen) = if fed.csv_enabled {
                        (
                            ModuleSubset::power_set().map(|s| (s, loss)).to_vec(),
                            ModuleSubset::EMPTY,
                        )
                    } else {
                        (vec![(ModuleSubset::FULL, loss)], ModuleSubset::FULL)
                    };
                    (
                        global,
                        RoundLog {
                            round,
                            subset_losses: table,
                            chosen,
                            post_train_val_loss: f64::NAN,
                        },
                    )
                } else {
                    // plain FedAvg: always integrate everything
                    let loss = validation_loss(&model, &global, &data.val, fed.train.loss)?;
                    (
                        global,
                        RoundLog {
                            round,
                            subset_losses: vec![(ModuleSubset::FULL, loss)],
                            chosen: ModuleSubset::FULL,
                            post_train_val_loss: f64::NAN,
                        },
                    )
                };

                // checkpoint after validation
                let chosen_loss = log.chosen_loss();
                if best.as_ref().is_none_or(|b| chosen_loss < b.val_loss) {
                    best = Some(Checkpoint {
                        params: integrated.clone(),
                        val_loss: chosen_loss,
                        epoch: 0,
                        round: Some(round),
                    });
                }

                let train_cfg = TrainConfig {
                    max_epochs: fed.local_epochs,
                    patience: fed.local_epochs.max(1),
                    ..fed.train.clone()
                };
                let outcome = train_local_offset(
                    &model,
                    integrated,
                    &data.train,
                    &data.val,
                    &train_cfg,
                    (round * fed.local_epochs) as u64,
                )?;
                log.post_train_val_loss =
                    outcome.history.last().map_or(chosen_loss, |r| r.val_loss);
                for record in &outcome.history {
                    history.push(RoundEpochRecord {
                        round,
                        epoch: record.epoch,
                        train_loss: record.train_loss,
                        val_loss: record.val_loss,
                    });
                }
                // checkpoint after each epoch, merged via the trainer's best
                if best
                    .as_ref()
                    .is_none_or(|b| outcome.best.val_loss < b.val_loss)
                {
                    best = Some(Checkpoint {
                        round: Some(round),
                        ..outcome.best
                    });
                }
                round_logs.push(log);
                best_val_by_round.push(best.as_ref().expect("set above").val_loss);

                let payload = serialize_params(&outcome.params);
                params = Some(outcome.params);
                conn.send(&Message {
                    kind: MessageKind::LocalParams,
                    round,
                    sender: client_id.clone(),
                    digest: manifest.digest(),
                    val_loss: Some(best.as_ref().expect("set above").val_loss),
                    payload,
                })?;
            }
            MessageKind::RoundDone => {}
            MessageKind::Shutdown => break,
            other => {
                return Err(FedError::Protocol {
                    want: "GLOBAL_PARAMS | ROUND_DONE | SHUTDOWN".into(),
                    got: other.name().into(),
                })
            }
        }
    }

    let best = best.ok_or_else(|| FedError::ClientFailure {
        client: client_id.clone(),
        detail: "shut down before any round".into(),
    })?;
    // restore the best checkpoint for the final test evaluation
    let test_metrics = evaluate(&model, &best.params, &data.test, &data.scaler)?;
    let final_params = params.expect("at least one round ran");
    Ok(ClientResult {
        client_id,
        best,
        final_params,
        round_logs,
        history,
        best_val_by_round,
        test_metrics,
        warnings,
    })
}

fn server_loop<T: Scalar>(
    conns: &mut BTreeMap<String, Box<dyn Connection>>,
    fed: &FederationConfig,
    manifest: &Manifest,
    mut global: ParamBundle<T>,
) -> Result<usize, FedError> {
    let mut best_vals: BTreeMap<String, f64> =
        conns.keys().map(|id| (id.clone(), f64::INFINITY)).collect();
    let mut stale_rounds = 0usize;
    let mut rounds_run = 0usize;

    for round in 0..fed.rounds {
        let payload = serialize_params(&global);
        for conn in conns.values_mut() {
            conn.send(&Message {
                kind: MessageKind::GlobalParams,
                round,
                sender: "server".into(),
                digest: manifest.digest(),
                val_loss: None,
                payload: payload.clone(),
            })?;
        }

        // barrier: collect every client's contribution, in id order
        let mut contributions: Vec<ParamBundle<T>> = Vec::with_capacity(conns.len());
        let mut any_improved = false;
        for (id, conn) in conns.iter_mut() {
            let msg = conn.recv().map_err(|e| FedError::ClientFailure {
                client: id.clone(),
                detail: format!("round {round}: {e}"),
            })?;
            if msg.kind != MessageKind::LocalParams || msg.round != round || msg.sender != *id {
                return Err(FedError::Protocol {
                    want: format!("LOCAL_PARAMS round {round} from {id}"),
                    got: format!(
                        "{} round {} from {}",
                        msg.kind.name(),
                        msg.round,
                        msg.sender
                    ),
                });
            }
            let bundle: ParamBundle<T> = deserialize_params(&msg.payload)?;
            bundle
                .manifest()
                .check_matches(manifest)
                .map_err(|e| FedError::Manifest {
                    client: id.clone(),
                    detail: e.to_string(),
                })?;
            let reported = msg.val_loss.ok_or_else(|| FedError::Protocol {
                want: "LOCAL_PARAMS with val metadata".into(),
                got: "LOCAL_PARAMS without val".into(),
            })?;
            let entry = best_vals.get_mut(id).expect("id registered");
            if reported < *entry {
                *entry = reported;
                any_improved = true;
            }
            contributions.push(bundle);
        }

        global = fedavg_aggregate(&contributions)?;
        rounds_run += 1;
        for conn in conns.values_mut() {
            conn.send(&Message::control(MessageKind::RoundDone, round, "server"))?;
        }

        if any_improved {
            stale_rounds = 0;
        } else {
            stale_rounds += 1;
            if fed.early_stop_rounds > 0 && stale_rounds >= fed.early_stop_rounds {
                break;
            }
        }
    }

    for conn in conns.values_mut() {
        conn.send(&Message::control(
            MessageKind::Shutdown,
            rounds_run,
            "server",
        ))?;
    }
    Ok(rounds_run)
}

fn receive_hello(conn: &mut dyn Connection, manifest: &Manifest) -> Result<String, FedError> {
    let hello = conn.recv()?;
    if hello.kind != MessageKind::Hello {
        return Err(FedError::Protocol {
            want: "HELLO".into(),
            got: hello.kind.name().into(),
        });
    }
    let (theirs, _) = Manifest::decode(&hello.payload).map_err(FedError::Codec)?;
    if theirs != *manifest || hello.digest != manifest.digest() {
        return Err(FedError::Manifest {
            client: hello.sender.clone(),
            detail: "registration manifest differs from the federation's".into(),
        });
    }
    Ok(hello.sender)
}

/// Run Algorithm 1 end to end and return per-client best parameters,
/// metrics and round logs (the replacement map's source).
pub fn run_federation<T: Scalar>(
    setups: Vec<ClientSetup<T>>,
    fed: &FederationConfig,
    transport: &TransportKind,
) -> Result<FederationOutcome<T>, FedError> {
    if setups.is_empty() {
        return Err(FedError::NoClients);
    }
    if fed.rounds == 0 {
        return Err(FedError::Transport("rounds must be at least 1".into()));
    }
    fed.train.validate().map_err(FedError::Train)?;
    let mut seen = std::collections::HashSet::new();
    for setup in &setups {
        setup.model.validate()?;
        if !seen.insert(setup.client_id.clone()) {
            return Err(FedError::DuplicateClient(setup.client_id.clone()));
        }
    }
    let manifest = Manifest::for_config(&setups[0].model, T::DTYPE);
    for setup in &setups[1..] {
        Manifest::for_config(&setup.model, T::DTYPE)
            .check_matches(&manifest)
            .map_err(|e| FedError::Manifest {
                client: setup.client_id.clone(),
                detail: e.to_string(),
            })?;
    }
    let global: ParamBundle<T> = ParamBundle::init(&setups[0].model, fed.init_seed);

    let (rounds_run, mut results) = match transport {
        TransportKind::InProc => {
            let mut server_sides: Vec<Box<dyn Connection>> = Vec::new();
            let mut client_sides: Vec<Box<dyn Connection>> = Vec::new();
            for _ in &setups {
                let (server_side, client_side) = inproc_pair();
                server_sides.push(Box::new(server_side));
                client_sides.push(Box::new(client_side));
            }
            run_threads(setups, client_sides, server_sides, fed, &manifest, global)?
        }
        TransportKind::Socket { host, port } => {
            let listener = TcpListener::bind((host.as_str(), *port))?;
            let addr = listener.local_addr()?;
            let client_sides: Vec<Box<dyn Connection>> = setups
                .iter()
                .map(|_| -> Result<Box<dyn Connection>, FedError> {
                    Ok(Box::new(SocketConnection::new(TcpStream::connect(addr)?)?))
                })
                .collect::<Result<_, _>>()?;
            let server_sides: Vec<Box<dyn Connection>> = (0..client_sides.len())
                .map(|_| -> Result<Box<dyn Connection>, FedError> {
                    let (stream, _) = listener.accept()?;
                    Ok(Box::new(SocketConnection::new(stream)?))
                })
                .collect::<Result<_, _>>()?;
            run_threads(setups, client_sides, server_sides, fed, &manifest, global)?
        }
    };

    results.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    Ok(FederationOutcome {
        clients: results,
        rounds_run,
    })
}

fn run_threads<T: Scalar>(
    setups: Vec<ClientSetup<T>>,
    client_sides: Vec<Box<dyn Connection>>,
    server_sides: Vec<Box<dyn Connection>>,
    fed: &FederationConfig,
    manifest: &Manifest,
    global: ParamBundle<T>,
) -> Result<(usize, Vec<ClientResult<T>>), FedError> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = setups
            .into_iter()
            .zip(client_sides)
            .map(|(setup, conn)| scope.spawn(move || client_loop(setup, conn, fed)))
            .collect();

        // register every connection by its HELLO sender
        let server_result = (|| {
            let mut conns: BTreeMap<String, Box<dyn Connection>> = BTreeMap::new();
            for mut conn in server_sides {
                let sender = receive_hello(conn.as_mut(), manifest)?;
                if conns.insert(sender.clone(), conn).is_some() {
                    return Err(FedError::DuplicateClient(sender));
                }
            }
            server_loop(&mut conns, fed, manifest, global)
        })();

        let mut results = Vec::new();
        let mut client_error: Option<FedError> = None;
        for handle in handles {
            match handle.join() {
                Ok(Ok(result)) => results.push(result),
                Ok(Err(e)) => client_error = Some(client_error.take().unwrap_or(e)),
                Err(_) => {
                    client_error = Some(
                        client_error
                            .take()
                            .unwrap_or(FedError::Transport("client worker panicked".into())),
                    )
                }
            }
        }
        match (server_result, client_error) {
            (Ok(rounds), None) => Ok((rounds, results)),
            // a client-side failure is the root cause when both fail
            (_, Some(e)) => Err(e),
            (Err(e), None) => Err(e),
        }
    })
}
