//! Round-loop behavior across transports, client shapes and degenerate
//! configurations.

mod support;

use fedcast_core::federation::{
    run_federation, ClientSetup, FederationConfig, Message, MessageKind, ModuleSubset,
    TransportKind,
};
use fedcast_core::training::TrainConfig;
use support::synthetic_client;

fn quick_fed(rounds: usize, local_epochs: usize) -> FederationConfig {
    FederationConfig {
        rounds,
        local_epochs,
        csv_enabled: true,
        early_stop_rounds: 10,
        init_seed: 42,
        train: TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: local_epochs,
            patience: local_epochs.max(1),
            seed: 42,
            ..Default::default()
        },
    }
}

fn trio<T: fedcast_core::scalar::Scalar>() -> Vec<ClientSetup<T>> {
    vec![
        synthetic_client("alpha", 3, 220, 11, 4, 3),
        synthetic_client("beta", 3, 220, 22, 4, 3),
        synthetic_client("gamma", 3, 220, 33, 4, 3),
    ]
}

#[test]
fn single_client_federation_degenerates_to_local_training() {
    let setups = vec![synthetic_client::<f32>("solo", 3, 220, 5, 4, 3)];
    let outcome = run_federation(setups, &quick_fed(2, 1), &TransportKind::InProc).unwrap();
    assert_eq!(outcome.rounds_run, 2);
    let client = &outcome.clients[0];
    assert_eq!(client.round_logs.len(), 2);
    // round 1: aggregated == the client's own trained params, so validation
    // ties everywhere and keeps local
    assert_eq!(client.round_logs[1].chosen, ModuleSubset::EMPTY);
    let table = &client.round_logs[1].subset_losses;
    assert!(table.iter().all(|(_, l)| *l == table[0].1));
}

#[test]
fn heterogeneous_node_counts_share_one_manifest() {
    let setups: Vec<ClientSetup<f32>> = vec![
        synthetic_client("a", 4, 220, 1, 4, 3),
        synthetic_client("b", 6, 220, 2, 4, 3),
        synthetic_client("c", 9, 220, 3, 4, 3),
    ];
    let manifests: Vec<_> = setups
        .iter()
        .map(|s| {
            fedcast_core::model::Manifest::for_config(&s.model, fedcast_core::scalar::Dtype::F32)
        })
        .collect();
    assert!(manifests
        .iter()
        .all(|m| m.encode() == manifests[0].encode()));
    let outcome = run_federation(setups, &quick_fed(3, 2), &TransportKind::InProc).unwrap();
    assert_eq!(outcome.rounds_run, 3);
    assert_eq!(outcome.clients.len(), 3);
    for client in &outcome.clients {
        assert_eq!(client.round_logs.len(), 3);
    }
}

#[test]
fn zero_local_epochs_is_pure_validation() {
    let outcome = run_federation(trio::<f32>(), &quick_fed(3, 0), &TransportKind::InProc).unwrap();
    for client in &outcome.clients {
        for log in &client.round_logs {
            assert!(log.chosen_loss() <= log.loss_of(ModuleSubset::EMPTY).unwrap());
        }
        // best val loss never increases round over round
        for pair in client.best_val_by_round.windows(2) {
            assert!(pair[1] <= pair[0], "{:?}", client.best_val_by_round);
        }
        assert!(client.history.is_empty(), "no epochs should run");
    }
}

#[test]
fn single_round_produces_one_log_per_client() {
    let outcome = run_federation(trio::<f32>(), &quick_fed(1, 1), &TransportKind::InProc).unwrap();
    assert_eq!(outcome.rounds_run, 1);
    for client in &outcome.clients {
        assert_eq!(client.round_logs.len(), 1);
        assert_eq!(client.round_logs[0].round, 0);
        assert_eq!(client.round_logs[0].chosen, ModuleSubset::EMPTY);
    }
}

fn replacement_fingerprint(
    outcome: &fedcast_core::federation::FederationOutcome<f32>,
) -> Vec<(String, usize, u8)> {
    outcome
        .clients
        .iter()
        .flat_map(|c| {
            c.round_logs.iter().map(|log| {
                let bits = log
                    .chosen
                    .members()
                    .fold(0u8, |acc, m| acc | (1 << (m as u8 as usize)));
                (c.client_id.clone(), log.round, bits)
            })
        })
        .collect()
}

#[test]
fn equal_seeds_reproduce_replacement_maps() {
    let a = run_federation(trio::<f32>(), &quick_fed(3, 2), &TransportKind::InProc).unwrap();
    let b = run_federation(trio::<f32>(), &quick_fed(3, 2), &TransportKind::InProc).unwrap();
    assert_eq!(replacement_fingerprint(&a), replacement_fingerprint(&b));
    for (ca, cb) in a.clients.iter().zip(b.clients.iter()) {
        assert_eq!(ca.round_logs, cb.round_logs);
        assert_eq!(ca.test_metrics, cb.test_metrics);
        assert_eq!(ca.best.params, cb.best.params);
    }
}

#[test]
fn socket_and_inproc_transports_agree_bitwise() {
    let fed = quick_fed(2, 1);
    let inproc = run_federation(trio::<f32>(), &fed, &TransportKind::InProc).unwrap();
    let socket = run_federation(
        trio::<f32>(),
        &fed,
        &TransportKind::Socket {
            host: "127.0.0.1".into(),
            port: 0,
        },
    )
    .unwrap();
    assert_eq!(inproc.rounds_run, socket.rounds_run);
    for (a, b) in inproc.clients.iter().zip(socket.clients.iter()) {
        assert_eq!(a.client_id, b.client_id);
        assert_eq!(a.round_logs, b.round_logs);
        assert_eq!(a.history, b.history);
        assert_eq!(a.test_metrics, b.test_metrics);
        assert_eq!(a.best.params, b.best.params);
    }
}

#[test]
fn best_checkpoint_never_worse_than_first_round_training() {
    let outcome = run_federation(trio::<f32>(), &quick_fed(4, 2), &TransportKind::InProc).unwrap();
    for client in &outcome.clients {
        let round0_post = client.round_logs[0].post_train_val_loss;
        assert!(
            client.best.val_loss <= round0_post,
            "{}: best {} vs round-0 post-training {round0_post}",
            client.client_id,
            client.best.val_loss
        );
    }
}

#[test]
fn mismatched_architectures_are_rejected() {
    let mut setups = trio::<f32>();
    setups[1].model.hidden_dim = 5;
    setups[1].model.embed_dim = 5;
    let err = match run_federation(setups, &quick_fed(1, 1), &TransportKind::InProc) {
        Err(e) => e,
        Ok(_) => panic!("divergent architecture must be rejected"),
    };
    assert!(err.to_string().to_lowercase().contains("manifest"), "{err}");
}

#[test]
fn failing_client_aborts_the_round_with_a_diagnostic() {
    // an empty validation set makes one client fail during round 0; the
    // federation must abort as a whole, with no partial aggregation
    let mut setups = trio::<f32>();
    setups[1].data.val = fedcast_core::data::WindowSet::empty(4, 1, 3, 3);
    let err = match run_federation(setups, &quick_fed(3, 1), &TransportKind::InProc) {
        Err(e) => e,
        Ok(_) => panic!("a failing client must abort the federation"),
    };
    let msg = err.to_string();
    assert!(
        msg.contains("empty") || msg.contains("failed") || msg.contains("disconnected"),
        "{msg}"
    );
}

#[test]
fn stale_rounds_trigger_federation_early_stop() {
    // with zero local epochs nothing improves after round 0, so the run
    // stops early_stop_rounds rounds later instead of reaching rounds
    let mut fed = quick_fed(50, 0);
    fed.early_stop_rounds = 3;
    let outcome = run_federation(trio::<f32>(), &fed, &TransportKind::InProc).unwrap();
    assert_eq!(outcome.rounds_run, 4, "1 improving round + 3 stale rounds");
    for client in &outcome.clients {
        assert_eq!(client.round_logs.len(), 4);
    }
}

#[test]
fn messages_cannot_carry_dataset_shapes() {
    // Clients with very different node and sample counts produce HELLO
    // frames that differ only in the sender field: the envelope has no
    // room for data arrays, node counts or sample counts.
    let small = synthetic_client::<f32>("aa", 3, 220, 1, 4, 3);
    let large = synthetic_client::<f32>("bb", 9, 440, 2, 4, 3);
    let hello = |setup: &ClientSetup<f32>| {
        let manifest = fedcast_core::model::Manifest::for_config(
            &setup.model,
            fedcast_core::scalar::Dtype::F32,
        );
        Message {
            kind: MessageKind::Hello,
            round: 0,
            sender: setup.client_id.clone(),
            digest: manifest.digest(),
            val_loss: None,
            payload: manifest.encode(),
        }
        .encode()
    };
    let a = hello(&small);
    let b = hello(&large);
    assert_eq!(a.len(), b.len());
    let diff: Vec<usize> = a
        .iter()
        .zip(b.iter())
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect();
    // the only differing bytes are inside the sender field of the header
    let header =
        String::from_utf8_lossy(&a[..a.iter().position(|&c| c == b'\n').unwrap()]).to_string();
    let sender_pos = header.find("sender=").unwrap() + "sender=".len();
    for i in diff {
        assert!(
            i >= sender_pos && i < sender_pos + 2,
            "unexpected difference at byte {i} of {header:?}"
        );
    }
}
