//! The client side of a federated run: train on the local shard, exchange
//! messages with the coordinator, never stall the protocol.

use crate::domain::{BinnedRecord, Dataset, Label};
use crate::federation::aggregate::{map_duals_onto_rows, AggregationMode, GlobalModel};
use crate::federation::message::Message;
use crate::federation::transport::FramedConn;
use crate::federation::FederationError;
use crate::learners::{
    train_dt, train_nb, train_svm, train_svm_problem, DtHyper, LinearSvmModel, LocalModel,
    ModelKind, SvmHyper, SvmProblem, TrainSet, TrainedModel,
};
use crate::metrics::confusion;

/// Everything a client needs to participate in a run.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub client_id: u32,
    /// Which learner this client trains locally.
    pub kind: ModelKind,
    pub mode: AggregationMode,
    /// Training rounds in fedavg mode; the coordinator sends one extra
    /// evaluation-only broadcast after the last one. Ignored in paper13.
    pub rounds: usize,
    pub dt: DtHyper,
    pub nb_alpha: f64,
    pub svm: SvmHyper,
}

/// Train this client's configured learner on its shard and package it with
/// its self-reported training metrics.
pub fn client_train(
    cfg: &ClientConfig,
    shard: &Dataset<BinnedRecord>,
) -> Result<LocalModel, FederationError> {
    let set = TrainSet::from_binned(shard).map_err(|e| tag(cfg.client_id, e.into()))?;
    let model = match cfg.kind {
        ModelKind::Dt => train_dt(&set, &cfg.dt).map(TrainedModel::Dt),
        ModelKind::Nb => train_nb(&set, cfg.nb_alpha).map(TrainedModel::Nb),
        ModelKind::Svm => train_svm(&set, &cfg.svm).map(TrainedModel::Svm),
    }
    .map_err(|e| tag(cfg.client_id, e.into()))?;
    package_local(cfg.client_id, &model, shard).map_err(|e| tag(cfg.client_id, e))
}

/// Attach training-shard metrics to a trained model.
fn package_local(
    client_id: u32,
    model: &TrainedModel,
    shard: &Dataset<BinnedRecord>,
) -> Result<LocalModel, FederationError> {
    let preds: Vec<Label> = shard
        .records
        .iter()
        .map(|r| model.predict(&crate::domain::feature_vector(r)))
        .collect();
    let cm = confusion(&preds, &shard.labels())?;
    Ok(LocalModel {
        client_id,
        train_size: shard.records.len(),
        train_accuracy_pct: cm.accuracy_pct(),
        train_confusion: cm,
        model: model.clone(),
    })
}

/// One fedavg local update: warm-start from the received global model by
/// distributing its dual weights onto this shard's matching rows (duals
/// whose points belong to other shards simply find no match), then run the
/// configured number of coordinate-ascent epochs.
fn fedavg_update(
    cfg: &ClientConfig,
    problem: &SvmProblem,
    cardinality: Vec<usize>,
    global: &LinearSvmModel,
) -> Result<LinearSvmModel, FederationError> {
    let mut alpha0 = vec![0.0; problem.len()];
    map_duals_onto_rows(
        &global.support_vectors,
        &global.dual_coefs,
        &problem.rows,
        &problem.labels,
        0..problem.len(),
        &mut alpha0,
    );
    Ok(train_svm_problem(problem, &cfg.svm, cardinality, Some(alpha0))?)
}

fn tag(client_id: u32, err: FederationError) -> FederationError {
    match err {
        e @ FederationError::ClientFailure { .. } => e,
        e => FederationError::ClientFailure {
            client_id,
            detail: e.to_string(),
        },
    }
}

/// Run the client end of the protocol to completion. Returns the last
/// global model the coordinator broadcast (if any).
pub fn run_client(
    mut conn: FramedConn,
    cfg: &ClientConfig,
    shard: &Dataset<BinnedRecord>,
) -> Result<Option<GlobalModel>, FederationError> {
    let result = match cfg.mode {
        AggregationMode::Paper13 => run_paper13(&mut conn, cfg, shard),
        AggregationMode::FedAvg => run_fedavg(&mut conn, cfg, shard),
    };
    result.map_err(|e| tag(cfg.client_id, e))
}

fn run_paper13(
    conn: &mut FramedConn,
    cfg: &ClientConfig,
    shard: &Dataset<BinnedRecord>,
) -> Result<Option<GlobalModel>, FederationError> {
    conn.send(&Message::Register {
        client_id: cfg.client_id,
    })?;
    let local = client_train(cfg, shard)?;
    conn.send(&Message::LocalModel {
        client_id: cfg.client_id,
        model: local,
    })?;
    conn.send(&Message::Shard {
        client_id: cfg.client_id,
        dataset: shard.clone(),
    })?;
    let mut latest = None;
    loop {
        match conn.recv()? {
            Message::GlobalModel { global, .. } => latest = Some(global),
            Message::Shutdown => return Ok(latest),
            other => {
                return Err(FederationError::Protocol {
                    expected: "global_model or shutdown".into(),
                    got: other.type_name().into(),
                })
            }
        }
    }
}

fn run_fedavg(
    conn: &mut FramedConn,
    cfg: &ClientConfig,
    shard: &Dataset<BinnedRecord>,
) -> Result<Option<GlobalModel>, FederationError> {
    if cfg.kind != ModelKind::Svm {
        return Err(FederationError::HeterogeneousModels {
            client_id: cfg.client_id,
            kind: cfg.kind,
        });
    }
    conn.send(&Message::Register {
        client_id: cfg.client_id,
    })?;
    let set = TrainSet::from_binned(shard)?;
    let problem = SvmProblem::from_train_set(&set, cfg.svm.encoding)?;
    let labels = shard.labels();
    let mut latest = None;
    loop {
        match conn.recv()? {
            Message::GlobalModel { round, global } => {
                let preds: Vec<Label> = shard
                    .records
                    .iter()
                    .map(|r| global.predict_record(r))
                    .collect();
                conn.send(&Message::EvalResult {
                    client_id: cfg.client_id,
                    round,
                    confusion: confusion(&preds, &labels)?,
                })?;
                if round <= cfg.rounds {
                    let svm =
                        fedavg_update(cfg, &problem, set.cardinality.clone(), &global.svm)?;
                    let model = TrainedModel::Svm(svm);
                    let local = package_local(cfg.client_id, &model, shard)?;
                    conn.send(&Message::LocalModel {
                        client_id: cfg.client_id,
                        model: local,
                    })?;
                }
                latest = Some(global);
            }
            Message::Shutdown => return Ok(latest),
            other => {
                return Err(FederationError::Protocol {
                    expected: "global_model or shutdown".into(),
                    got: other.type_name().into(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::default_schema;
    use crate::federation::transport::{inproc_pair, SendPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shard(seed: u64, n: usize) -> Dataset<BinnedRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|_| {
                let carrier = rng.gen_bool(0.5);
                let mut bins = [0u8; 9];
                for (f, b) in bins.iter_mut().enumerate() {
                    *b = if carrier && f < 3 {
                        rng.gen_range(0..2)
                    } else {
                        rng.gen_range(1..6)
                    };
                }
                BinnedRecord {
                    age_bin: 1,
                    gender_bin: rng.gen_range(0..2),
                    bins,
                    label: if carrier { Label::Carrier } else { Label::NonCarrier },
                }
            })
            .collect();
        Dataset {
            schema: default_schema(),
            records,
            provenance: format!("test(seed={seed})"),
        }
    }

    fn config(kind: ModelKind, mode: AggregationMode) -> ClientConfig {
        ClientConfig {
            client_id: 3,
            kind,
            mode,
            rounds: 2,
            dt: DtHyper::default(),
            nb_alpha: 1.0,
            svm: SvmHyper {
                epochs: 25,
                ..SvmHyper::default()
            },
        }
    }

    #[test]
    fn client_train_reports_consistent_metadata() {
        let data = shard(1, 80);
        for kind in [ModelKind::Dt, ModelKind::Nb, ModelKind::Svm] {
            let cfg = config(kind, AggregationMode::Paper13);
            let local = client_train(&cfg, &data).unwrap();
            assert_eq!(local.client_id, 3);
            assert_eq!(local.train_size, 80);
            assert_eq!(local.model.kind(), kind);
            assert_eq!(local.train_confusion.n(), 80);
            assert!(
                (local.train_accuracy_pct - local.train_confusion.accuracy_pct()).abs() < 1e-12
            );
        }
    }

    #[test]
    fn client_errors_carry_the_client_id() {
        let empty = Dataset {
            schema: default_schema(),
            records: Vec::new(),
            provenance: "empty".into(),
        };
        let cfg = config(ModelKind::Dt, AggregationMode::Paper13);
        match client_train(&cfg, &empty) {
            Err(FederationError::ClientFailure { client_id, .. }) => assert_eq!(client_id, 3),
            other => panic!("expected ClientFailure, got {other:?}"),
        }
    }

    #[test]
    fn fedavg_client_rejects_non_svm_kinds() {
        let cfg = config(ModelKind::Nb, AggregationMode::FedAvg);
        let (conn, _peer) = inproc_pair(SendPolicy::for_mode(AggregationMode::FedAvg));
        match run_client(conn, &cfg, &shard(2, 20)) {
            Err(FederationError::ClientFailure { client_id, detail }) => {
                assert_eq!(client_id, 3);
                assert!(detail.contains("svm"), "{detail}");
            }
            other => panic!("expected ClientFailure, got {other:?}"),
        }
    }

    #[test]
    fn paper13_client_walks_the_expected_script() {
        let data = shard(3, 60);
        let cfg = config(ModelKind::Svm, AggregationMode::Paper13);
        let policy = SendPolicy::for_mode(AggregationMode::Paper13);
        let (client_end, mut coord_end) = inproc_pair(policy);
        let data_clone = data.clone();
        let handle =
            std::thread::spawn(move || run_client(client_end, &cfg, &data_clone));

        assert_eq!(coord_end.recv().unwrap(), Message::Register { client_id: 3 });
        let local = match coord_end.recv().unwrap() {
            Message::LocalModel { client_id, model } => {
                assert_eq!(client_id, 3);
                model
            }
            other => panic!("expected local model, got {other:?}"),
        };
        match coord_end.recv().unwrap() {
            Message::Shard { client_id, dataset } => {
                assert_eq!(client_id, 3);
                assert_eq!(dataset, data);
            }
            other => panic!("expected shard, got {other:?}"),
        }
        assert_eq!(local.model.kind(), ModelKind::Svm);
        let global = crate::federation::aggregate::zero_global(
            &SvmHyper::default(),
            AggregationMode::Paper13,
        );
        coord_end
            .send(&Message::GlobalModel { round: 1, global: global.clone() })
            .unwrap();
        coord_end.send(&Message::Shutdown).unwrap();
        let received = handle.join().unwrap().unwrap();
        assert_eq!(received, Some(global));
    }

    #[test]
    fn fedavg_client_evaluates_and_retrains_each_round() {
        let data = shard(4, 60);
        let mut cfg = config(ModelKind::Svm, AggregationMode::FedAvg);
        cfg.rounds = 1;
        let policy = SendPolicy::for_mode(AggregationMode::FedAvg);
        let (client_end, mut coord_end) = inproc_pair(policy);
        let data_clone = data.clone();
        let cfg_clone = cfg.clone();
        let handle =
            std::thread::spawn(move || run_client(client_end, &cfg_clone, &data_clone));

        assert_eq!(coord_end.recv().unwrap(), Message::Register { client_id: 3 });
        let zero = crate::federation::aggregate::zero_global(&cfg.svm, AggregationMode::FedAvg);
        coord_end
            .send(&Message::GlobalModel { round: 1, global: zero })
            .unwrap();
        // Round 1: an eval of the zero model (everything predicted carrier)
        // and a trained local model.
        match coord_end.recv().unwrap() {
            Message::EvalResult { client_id, round, confusion } => {
                assert_eq!((client_id, round), (3, 1));
                assert_eq!(confusion.false_neg + confusion.true_neg, 0);
                assert_eq!(confusion.n(), 60);
            }
            other => panic!("expected eval result, got {other:?}"),
        }
        let local = match coord_end.recv().unwrap() {
            Message::LocalModel { model, .. } => model,
            other => panic!("expected local model, got {other:?}"),
        };
        assert!(local.train_accuracy_pct > 60.0);

        // Round 2 (> rounds): eval only, then shutdown.
        let final_global = match local.model {
            TrainedModel::Svm(svm) => GlobalModel {
                svm,
                mean_feature_importances: None,
                provenance: crate::federation::aggregate::GlobalProvenance {
                    mode: AggregationMode::FedAvg,
                    round_count: 1,
                    client_ids: vec![3],
                },
            },
            _ => unreachable!(),
        };
        coord_end
            .send(&Message::GlobalModel { round: 2, global: final_global.clone() })
            .unwrap();
        match coord_end.recv().unwrap() {
            Message::EvalResult { round, confusion, .. } => {
                assert_eq!(round, 2);
                assert!(confusion.accuracy_pct() > 60.0);
            }
            other => panic!("expected eval result, got {other:?}"),
        }
        coord_end.send(&Message::Shutdown).unwrap();
        let received = handle.join().unwrap().unwrap();
        assert_eq!(received, Some(final_global));
    }

    #[test]
    fn unexpected_messages_are_protocol_errors() {
        let data = shard(5, 30);
        let cfg = config(ModelKind::Svm, AggregationMode::Paper13);
        let policy = SendPolicy::for_mode(AggregationMode::Paper13);
        let (client_end, mut coord_end) = inproc_pair(policy);
        let handle = std::thread::spawn(move || run_client(client_end, &cfg, &data));
        // Drain the client's three opening messages.
        for _ in 0..3 {
            coord_end.recv().unwrap();
        }
        coord_end
            .send(&Message::Register { client_id: 99 })
            .unwrap();
        match handle.join().unwrap() {
            Err(FederationError::ClientFailure { client_id, detail }) => {
                assert_eq!(client_id, 3);
                assert!(detail.contains("register"), "{detail}");
            }
            other => panic!("expected tagged protocol failure, got {other:?}"),
        }
    }
}
