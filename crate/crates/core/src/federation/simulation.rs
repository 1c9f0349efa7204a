//! End-to-end simulation: data acquisition, cleaning, binning, splitting,
//! sharding, federated training over a chosen transport, and evaluation.
//!
//! A single master seed drives every stochastic stage through
//! [`stage_seed`], so a run is fully determined by its configuration — the
//! outputs contain no timestamps and rerunning a config reproduces them
//! byte for byte, over either transport.

use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{default_schema, BinnedRecord, Dataset};
use crate::federation::aggregate::{AggregationMode, AggregationReport, GlobalModel};
use crate::federation::client::{run_client, ClientConfig};
use crate::federation::coordinator::{run_coordinator, CoordinatorConfig};
use crate::federation::transport::{inproc_pair, FramedConn, SendPolicy};
use crate::federation::{FederationError, RoundLog};
use crate::ingest::{
    clean, load_raw_csv, partition_clients, train_val_split, CleaningMode, CleaningReport,
    SplitSpec,
};
use crate::learners::{DtHyper, LocalModel, ModelKind, SvmHyper};
use crate::metrics::EvalReport;
use crate::preprocess::normalize_dataset;
use crate::synthgen::{generate, GenConfig};

/// Stage constants for [`stage_seed`]. Public so standalone tools (the
/// `gen`/`split` subcommands) can derive the exact seeds a full run uses.
pub mod stage {
    pub const GENERATE: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const SVM: u64 = 4;
}

/// Derive a per-stage seed from the master seed (splitmix64 finalizer), so
/// changing one stage's consumption pattern never perturbs another's.
pub fn stage_seed(master: u64, stage: u64) -> u64 {
    let mut z = master.wrapping_add(stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Where the raw records come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate a synthetic cohort (its seed is overridden by the master
    /// seed's generate-stage derivation).
    Synth(GenConfig),
    /// Load a raw CSV export.
    File(PathBuf),
}

/// Which transport carries the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    /// In-process channels between coordinator and client threads.
    InProc,
    /// Real TCP sockets on localhost; port 0 picks an ephemeral port.
    Tcp { port: u16 },
}

/// Full configuration of a simulated federated run.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub source: DataSource,
    pub cleaning: CleaningMode,
    pub train_fraction: f64,
    pub client_count: usize,
    /// Learner kinds assigned to clients round-robin (client `i` gets
    /// `kinds[i % kinds.len()]`).
    pub kinds: Vec<ModelKind>,
    pub mode: AggregationMode,
    /// Fedavg round count; ignored by paper13.
    pub rounds: usize,
    pub transport: TransportKind,
    pub dt: DtHyper,
    pub nb_alpha: f64,
    /// SVM hyperparameters for clients and the pooled retraining; the
    /// shuffle seed inside is overridden by the master seed's derivation.
    pub svm: SvmHyper,
    /// Master seed for the whole run.
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            source: DataSource::Synth(GenConfig::default()),
            cleaning: CleaningMode::Drop,
            train_fraction: 0.7,
            client_count: 3,
            kinds: vec![ModelKind::Dt, ModelKind::Nb, ModelKind::Svm],
            mode: AggregationMode::Paper13,
            rounds: 10,
            transport: TransportKind::InProc,
            dt: DtHyper::default(),
            nb_alpha: 1.0,
            svm: SvmHyper::default(),
            seed: 42,
        }
    }
}

/// Everything a finished simulation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub global: GlobalModel,
    pub train_report: EvalReport,
    pub val_report: EvalReport,
    pub round_log: RoundLog,
    pub locals: Vec<LocalModel>,
    pub aggregation: Option<AggregationReport>,
    pub cleaning: CleaningReport,
    pub train_rows: usize,
    pub val_rows: usize,
    pub client_rows: Vec<usize>,
}

/// A pipeline failure, tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("{stage}: {detail}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub detail: String,
}

impl PipelineError {
    pub fn new(stage: &'static str, err: impl std::fmt::Display) -> PipelineError {
        PipelineError {
            stage,
            detail: err.to_string(),
        }
    }
}

/// Run the whole pipeline described by `cfg`.
pub fn run_simulation(cfg: &SimConfig) -> Result<SimOutput, PipelineError> {
    if cfg.kinds.is_empty() {
        return Err(PipelineError::new("config", "kinds must not be empty"));
    }
    if cfg.client_count == 0 {
        return Err(PipelineError::new("config", "client_count must be at least 1"));
    }
    let kinds: Vec<ModelKind> = (0..cfg.client_count)
        .map(|i| cfg.kinds[i % cfg.kinds.len()])
        .collect();
    if cfg.mode == AggregationMode::FedAvg {
        if let Some(pos) = kinds.iter().position(|k| *k != ModelKind::Svm) {
            return Err(PipelineError::new(
                "config",
                format!(
                    "fedavg requires every client to train an svm; client {} is configured as {}",
                    pos + 1,
                    kinds[pos]
                ),
            ));
        }
        if cfg.rounds == 0 {
            return Err(PipelineError::new("config", "fedavg needs rounds >= 1"));
        }
    }

    // Acquire raw records.
    let (raw, load_report) = match &cfg.source {
        DataSource::Synth(gen_cfg) => {
            let seeded = GenConfig {
                seed: stage_seed(cfg.seed, stage::GENERATE),
                ..gen_cfg.clone()
            };
            let ds = generate(&seeded).map_err(|e| PipelineError::new("generate", e))?;
            let report = CleaningReport {
                rows_read: ds.len(),
                rows_dropped_missing: 0,
                columns_dropped: Vec::new(),
                rows_kept: ds.len(),
            };
            (ds, report)
        }
        DataSource::File(path) => {
            load_raw_csv(path, &default_schema()).map_err(|e| PipelineError::new("load", e))?
        }
    };

    // Clean and bin.
    let (cleaned, clean_report) = clean(&raw, cfg.cleaning).map_err(|e| PipelineError::new("clean", e))?;
    let cleaning = CleaningReport {
        rows_read: load_report.rows_read,
        rows_dropped_missing: clean_report.rows_dropped_missing,
        columns_dropped: load_report.columns_dropped,
        rows_kept: clean_report.rows_kept,
    };
    let binned = normalize_dataset(
        &cleaned.records,
        &cleaned.schema,
        format!("{} binned", cleaned.provenance),
    )
    .map_err(|e| PipelineError::new("preprocess", e))?;

    // Split and shard.
    let split_spec = SplitSpec {
        train_fraction: cfg.train_fraction,
        seed: stage_seed(cfg.seed, stage::SPLIT),
        client_count: cfg.client_count,
    };
    let (train, val) = train_val_split(&binned, &split_spec).map_err(|e| PipelineError::new("split", e))?;
    let shards = partition_clients(
        &train,
        cfg.client_count,
        stage_seed(cfg.seed, stage::PARTITION),
    )
    .map_err(|e| PipelineError::new("partition", e))?;
    let client_rows: Vec<usize> = shards.iter().map(Dataset::len).collect();
    let train_rows = train.len();
    let val_rows = val.len();

    // Federate.
    let svm_hyper = SvmHyper {
        seed: stage_seed(cfg.seed, stage::SVM),
        ..cfg.svm
    };
    let client_cfgs: Vec<ClientConfig> = kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| ClientConfig {
            client_id: i as u32 + 1,
            kind: *kind,
            mode: cfg.mode,
            rounds: cfg.rounds,
            dt: cfg.dt,
            nb_alpha: cfg.nb_alpha,
            svm: svm_hyper,
        })
        .collect();
    let coordinator_cfg = CoordinatorConfig {
        mode: cfg.mode,
        rounds: cfg.rounds,
        svm: svm_hyper,
        expected_clients: cfg.client_count,
        val: val.clone(),
    };
    let policy = SendPolicy::for_mode(cfg.mode);

    let (coord_conns, handles) = match cfg.transport {
        TransportKind::InProc => spawn_inproc_clients(client_cfgs, shards, policy),
        TransportKind::Tcp { port } => spawn_tcp_clients(client_cfgs, shards, policy, port)
            .map_err(|e| PipelineError::new("transport", e))?,
    };

    let outcome = run_coordinator(coord_conns, &coordinator_cfg);

    // Join the client threads regardless of how the coordinator fared; a
    // coordinator failure closes the connections and unblocks them.
    let mut client_error: Option<String> = None;
    for handle in handles {
        match handle.join() {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => {
                client_error.get_or_insert(e.to_string());
            }
            Err(_) => {
                client_error.get_or_insert("client thread panicked".to_string());
            }
        }
    }
    let outcome = outcome.map_err(|e| PipelineError::new("federate", e))?;
    if let Some(detail) = client_error {
        return Err(PipelineError::new("federate", detail));
    }

    Ok(SimOutput {
        global: outcome.global,
        train_report: outcome.train_report,
        val_report: outcome.val_report,
        round_log: outcome.round_log,
        locals: outcome.locals,
        aggregation: outcome.aggregation,
        cleaning,
        train_rows,
        val_rows,
        client_rows,
    })
}

type ClientHandle = thread::JoinHandle<Result<Option<GlobalModel>, FederationError>>;

fn spawn_inproc_clients(
    cfgs: Vec<ClientConfig>,
    shards: Vec<Dataset<BinnedRecord>>,
    policy: SendPolicy,
) -> (Vec<FramedConn>, Vec<ClientHandle>) {
    let mut conns = Vec::with_capacity(cfgs.len());
    let mut handles = Vec::with_capacity(cfgs.len());
    for (cfg, shard) in cfgs.into_iter().zip(shards) {
        let (coord_end, client_end) = inproc_pair(policy);
        conns.push(coord_end);
        handles.push(thread::spawn(move || run_client(client_end, &cfg, &shard)));
    }
    (conns, handles)
}

fn spawn_tcp_clients(
    cfgs: Vec<ClientConfig>,
    shards: Vec<Dataset<BinnedRecord>>,
    policy: SendPolicy,
    port: u16,
) -> Result<(Vec<FramedConn>, Vec<ClientHandle>), std::io::Error> {
    let listener = TcpListener::bind(("127.0.0.1", port))?;
    let addr = listener.local_addr()?;
    let mut handles = Vec::with_capacity(cfgs.len());
    for (cfg, shard) in cfgs.into_iter().zip(shards) {
        handles.push(thread::spawn(move || {
            let stream = connect_with_retry(addr)?;
            let conn = FramedConn::tcp(stream, policy)?;
            run_client(conn, &cfg, &shard)
        }));
    }
    let mut conns = Vec::with_capacity(handles.len());
    for _ in 0..handles.len() {
        let (stream, _) = listener.accept()?;
        conns.push(FramedConn::tcp(stream, policy).map_err(std::io::Error::other)?);
    }
    Ok((conns, handles))
}

fn connect_with_retry(addr: std::net::SocketAddr) -> Result<TcpStream, FederationError> {
    let mut last = None;
    for _ in 0..50 {
        match TcpStream::connect(addr) {
            Ok(stream) => return Ok(stream),
            Err(e) => {
                last = Some(e);
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
    Err(FederationError::Wire(
        crate::federation::message::WireError::Io(last.expect("at least one attempt")),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::federation::aggregate::global_to_json;

    fn small_config() -> SimConfig {
        SimConfig {
            source: DataSource::Synth(GenConfig {
                n_total: 400,
                n_carrier: 160,
                ..GenConfig::default()
            }),
            svm: SvmHyper {
                epochs: 25,
                ..SvmHyper::default()
            },
            ..SimConfig::default()
        }
    }

    #[test]
    fn stage_seed_is_deterministic_and_spread_out() {
        assert_eq!(stage_seed(42, 1), stage_seed(42, 1));
        let seeds: std::collections::HashSet<u64> =
            (0..64).map(|s| stage_seed(42, s)).collect();
        assert_eq!(seeds.len(), 64);
        assert_ne!(stage_seed(42, 1), stage_seed(43, 1));
    }

    #[test]
    fn paper13_simulation_runs_end_to_end_in_process() {
        let out = run_simulation(&small_config()).unwrap();
        assert_eq!(out.cleaning.rows_read, 400);
        assert_eq!(out.train_rows, 280);
        assert_eq!(out.val_rows, 120);
        assert_eq!(out.client_rows, vec![94, 93, 93]);
        assert_eq!(out.locals.len(), 3);
        assert_eq!(out.locals[0].model.kind(), ModelKind::Dt);
        assert_eq!(out.locals[1].model.kind(), ModelKind::Nb);
        assert_eq!(out.locals[2].model.kind(), ModelKind::Svm);
        assert!(out.aggregation.is_some());
        assert_eq!(out.round_log.rounds.len(), 1);
        assert!(out.val_report.accuracy_pct > 70.0);
    }

    #[test]
    fn fedavg_simulation_runs_end_to_end_in_process() {
        let cfg = SimConfig {
            mode: AggregationMode::FedAvg,
            kinds: vec![ModelKind::Svm],
            rounds: 3,
            ..small_config()
        };
        let out = run_simulation(&cfg).unwrap();
        assert_eq!(out.round_log.rounds.len(), 3);
        assert!(out.round_log.is_contiguous());
        assert!(out.aggregation.is_none());
        assert!(out.val_report.accuracy_pct > 70.0);
    }

    #[test]
    fn identical_seeds_reproduce_identical_outputs() {
        let cfg = small_config();
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert_eq!(global_to_json(&a.global), global_to_json(&b.global));
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let different = SimConfig { seed: 43, ..cfg };
        let c = run_simulation(&different).unwrap();
        assert_ne!(global_to_json(&a.global), global_to_json(&c.global));
    }

    #[test]
    fn tcp_transport_reproduces_the_in_process_run() {
        let base = SimConfig {
            source: DataSource::Synth(GenConfig {
                n_total: 240,
                n_carrier: 100,
                ..GenConfig::default()
            }),
            svm: SvmHyper {
                epochs: 15,
                ..SvmHyper::default()
            },
            ..SimConfig::default()
        };
        let inproc = run_simulation(&base).unwrap();
        let tcp_cfg = SimConfig {
            transport: TransportKind::Tcp { port: 0 },
            ..base
        };
        let tcp = run_simulation(&tcp_cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&inproc).unwrap(),
            serde_json::to_string(&tcp).unwrap()
        );
    }

    #[test]
    fn config_errors_are_tagged_with_their_stage() {
        let bad_kinds = SimConfig {
            kinds: Vec::new(),
            ..small_config()
        };
        assert_eq!(run_simulation(&bad_kinds).unwrap_err().stage, "config");

        let bad_mode = SimConfig {
            mode: AggregationMode::FedAvg,
            kinds: vec![ModelKind::Dt],
            ..small_config()
        };
        let err = run_simulation(&bad_mode).unwrap_err();
        assert_eq!(err.stage, "config");
        assert!(err.detail.contains("svm"));

        let bad_split = SimConfig {
            train_fraction: 1.5,
            ..small_config()
        };
        assert_eq!(run_simulation(&bad_split).unwrap_err().stage, "split");

        let missing_file = SimConfig {
            source: DataSource::File(PathBuf::from("/nonexistent/data.csv")),
            ..small_config()
        };
        assert_eq!(run_simulation(&missing_file).unwrap_err().stage, "load");

        let bad_gen = SimConfig {
            source: DataSource::Synth(GenConfig {
                n_total: 10,
                n_carrier: 20,
                ..GenConfig::default()
            }),
            ..small_config()
        };
        assert_eq!(run_simulation(&bad_gen).unwrap_err().stage, "generate");
    }

    #[test]
    fn default_config_matches_the_published_cohort_shape() {
        let cfg = SimConfig::default();
        match &cfg.source {
            DataSource::Synth(g) => {
                assert_eq!(g.n_total, 5066);
                assert_eq!(g.n_carrier, 2015);
            }
            DataSource::File(_) => panic!("default source should be synthetic"),
        }
        assert_eq!(cfg.client_count, 3);
        assert!((cfg.train_fraction - 0.7).abs() < 1e-12);
        assert_eq!(cfg.mode, AggregationMode::Paper13);
    }
}
