//! The coordinator side: registration barrier, per-mode orchestration, and
//! global-model evaluation.
//!
//! Determinism contract: after the registration barrier the clients are
//! ordered by client id, every subsequent receive happens in that fixed
//! order, and aggregation folds contributions in that order — so results
//! are independent of thread scheduling and connection arrival order.

use crate::domain::{BinnedRecord, Dataset, Label};
use crate::federation::aggregate::{
    aggregate_paper13, weighted_average_svm, zero_global, AggregationMode, AggregationReport,
    GlobalModel, GlobalProvenance,
};
use crate::federation::message::Message;
use crate::federation::transport::FramedConn;
use crate::federation::{FederationError, RoundEntry, RoundLog};
use crate::learners::{LinearSvmModel, LocalModel, SvmHyper, TrainedModel};
use crate::metrics::{report, EvalReport, SplitTag};

/// Coordinator-side settings for one federated run.
#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub mode: AggregationMode,
    /// Training rounds in fedavg mode; paper13 always performs exactly one.
    pub rounds: usize,
    /// Hyperparameters for the pooled retraining (paper13) or the shape of
    /// the initial zero model (fedavg).
    pub svm: SvmHyper,
    pub expected_clients: usize,
    /// Held-out rows the coordinator scores every global model against.
    pub val: Dataset<BinnedRecord>,
}

/// Everything a finished run produces.
#[derive(Debug)]
pub struct CoordinationOutcome {
    pub global: GlobalModel,
    /// Final local model per client, in client-id order.
    pub locals: Vec<LocalModel>,
    pub round_log: RoundLog,
    /// Merge diagnostics (paper13 only).
    pub aggregation: Option<AggregationReport>,
    /// The final global model scored on the pooled training rows.
    pub train_report: EvalReport,
    /// The final global model scored on the held-out rows.
    pub val_report: EvalReport,
}

/// Score a global model against a set of binned records.
pub fn evaluate_global(
    global: &GlobalModel,
    records: &[BinnedRecord],
    split_tag: SplitTag,
) -> Result<EvalReport, FederationError> {
    let preds: Vec<Label> = records.iter().map(|r| global.predict_record(r)).collect();
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    Ok(crate::metrics::evaluate(&preds, &labels, split_tag)?)
}

/// Drive a federated run over the given connections to completion.
pub fn run_coordinator(
    conns: Vec<FramedConn>,
    cfg: &CoordinatorConfig,
) -> Result<CoordinationOutcome, FederationError> {
    if conns.len() != cfg.expected_clients || conns.is_empty() {
        return Err(FederationError::Protocol {
            expected: format!("{} client connections", cfg.expected_clients),
            got: conns.len().to_string(),
        });
    }

    // Registration barrier: one Register per connection, then a fixed
    // client-id order for everything that follows.
    let mut clients: Vec<(u32, FramedConn)> = Vec::with_capacity(conns.len());
    for mut conn in conns {
        match conn.recv()? {
            Message::Register { client_id } => clients.push((client_id, conn)),
            other => {
                return Err(FederationError::Protocol {
                    expected: "register".into(),
                    got: other.type_name().into(),
                })
            }
        }
    }
    clients.sort_by_key(|(id, _)| *id);
    for pair in clients.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(FederationError::Protocol {
                expected: "unique client ids".into(),
                got: format!("client id {} registered twice", pair[0].0),
            });
        }
    }

    match cfg.mode {
        AggregationMode::Paper13 => run_paper13(clients, cfg),
        AggregationMode::FedAvg => run_fedavg(clients, cfg),
    }
}

fn expect_local_model(
    conn: &mut FramedConn,
    id: u32,
) -> Result<LocalModel, FederationError> {
    match conn.recv()? {
        Message::LocalModel { client_id, model } if client_id == id && model.client_id == id => {
            Ok(model)
        }
        Message::LocalModel { client_id, .. } => Err(FederationError::Protocol {
            expected: format!("local model from client {id}"),
            got: format!("local model from client {client_id}"),
        }),
        other => Err(FederationError::Protocol {
            expected: format!("local model from client {id}"),
            got: other.type_name().into(),
        }),
    }
}

fn run_paper13(
    mut clients: Vec<(u32, FramedConn)>,
    cfg: &CoordinatorConfig,
) -> Result<CoordinationOutcome, FederationError> {
    let mut locals = Vec::with_capacity(clients.len());
    let mut shards = Vec::with_capacity(clients.len());
    for (id, conn) in &mut clients {
        locals.push(expect_local_model(conn, *id)?);
        match conn.recv()? {
            Message::Shard { client_id, dataset } if client_id == *id => shards.push(dataset),
            other => {
                return Err(FederationError::Protocol {
                    expected: format!("shard from client {id}"),
                    got: other.type_name().into(),
                })
            }
        }
    }

    let (global, aggregation) = aggregate_paper13(&locals, &shards, &cfg.svm)?;

    let pooled: Vec<BinnedRecord> = shards
        .iter()
        .flat_map(|s| s.records.iter().copied())
        .collect();
    let train_report = evaluate_global(&global, &pooled, SplitTag::Train)?;
    let val_report = evaluate_global(&global, &cfg.val.records, SplitTag::Validation)?;
    let round_log = RoundLog {
        rounds: vec![RoundEntry {
            round_index: 1,
            train_accuracy_pct: train_report.accuracy_pct,
            val_accuracy_pct: val_report.accuracy_pct,
        }],
    };

    for (_, conn) in &mut clients {
        conn.send(&Message::GlobalModel {
            round: 1,
            global: global.clone(),
        })?;
        conn.send(&Message::Shutdown)?;
    }

    Ok(CoordinationOutcome {
        global,
        locals,
        round_log,
        aggregation: Some(aggregation),
        train_report,
        val_report,
    })
}

fn run_fedavg(
    mut clients: Vec<(u32, FramedConn)>,
    cfg: &CoordinatorConfig,
) -> Result<CoordinationOutcome, FederationError> {
    if cfg.rounds == 0 {
        return Err(FederationError::Protocol {
            expected: "at least one fedavg round".into(),
            got: "rounds = 0".into(),
        });
    }
    let client_ids: Vec<u32> = clients.iter().map(|(id, _)| *id).collect();
    let mut global = zero_global(&cfg.svm, AggregationMode::FedAvg);
    let mut locals: Vec<Option<LocalModel>> = vec![None; clients.len()];
    let mut round_log = RoundLog::default();
    // Validation accuracy of the current `global`, pending until its
    // training accuracy arrives with the next broadcast's eval results.
    let mut pending_val = 0.0;
    let mut train_report = None;

    // Broadcast rounds 1..=rounds train; round rounds+1 only collects the
    // final model's training-shard evaluations.
    for round in 1..=cfg.rounds + 1 {
        for (_, conn) in &mut clients {
            conn.send(&Message::GlobalModel {
                round,
                global: global.clone(),
            })?;
        }

        let mut eval_total = crate::metrics::ConfusionMatrix::default();
        let mut contributions: Vec<(LinearSvmModel, usize)> = Vec::new();
        for (slot, (id, conn)) in clients.iter_mut().enumerate() {
            match conn.recv()? {
                Message::EvalResult {
                    client_id,
                    round: r,
                    confusion,
                } if client_id == *id && r == round => eval_total.absorb(&confusion),
                other => {
                    return Err(FederationError::Protocol {
                        expected: format!("eval result for round {round} from client {id}"),
                        got: other.type_name().into(),
                    })
                }
            }
            if round <= cfg.rounds {
                let local = expect_local_model(conn, *id)?;
                match &local.model {
                    TrainedModel::Svm(svm) => {
                        contributions.push((svm.clone(), local.train_size))
                    }
                    other => {
                        return Err(FederationError::HeterogeneousModels {
                            client_id: *id,
                            kind: other.kind(),
                        })
                    }
                }
                locals[slot] = Some(local);
            }
        }

        // The evals just collected scored the model broadcast this round,
        // i.e. the global built in round - 1. Round 1 scored the zero
        // model, which predates training and is not logged.
        if round >= 2 {
            let r = report(eval_total, SplitTag::Train);
            round_log.rounds.push(RoundEntry {
                round_index: round - 1,
                train_accuracy_pct: r.accuracy_pct,
                val_accuracy_pct: pending_val,
            });
            if round == cfg.rounds + 1 {
                train_report = Some(r);
            }
        }

        if round <= cfg.rounds {
            let svm = weighted_average_svm(&contributions)?;
            global = GlobalModel {
                svm,
                mean_feature_importances: None,
                provenance: GlobalProvenance {
                    mode: AggregationMode::FedAvg,
                    round_count: round,
                    client_ids: client_ids.clone(),
                },
            };
            pending_val = evaluate_global(&global, &cfg.val.records, SplitTag::Validation)?
                .accuracy_pct;
        }
    }

    for (_, conn) in &mut clients {
        conn.send(&Message::Shutdown)?;
    }

    let val_report = evaluate_global(&global, &cfg.val.records, SplitTag::Validation)?;
    let locals = locals
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .expect("every client sent a model in every training round");
    Ok(CoordinationOutcome {
        global,
        locals,
        round_log,
        aggregation: None,
        train_report: train_report.expect("fedavg runs at least one round"),
        val_report,
    })
}
