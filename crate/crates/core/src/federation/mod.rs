//! Federated training: wire protocol, transports, aggregation, and the
//! coordinator/client event loops that tie them together.
//!
//! Two aggregation modes are supported:
//!
//! * [`AggregationMode::Paper13`] — a single-shot exchange where every client
//!   uploads its trained local model *and* its binned shard; the coordinator
//!   merges SVM parameters, averages decision-tree feature importances, and
//!   retrains a global SVM on the pooled rows warm-started from the merged
//!   dual variables.
//! * [`AggregationMode::FedAvg`] — an iterative loop where only model
//!   parameters travel; shards stay on the clients and the coordinator
//!   forms each round's global model as the shard-size-weighted average of
//!   the client SVMs.
//!
//! Both modes run over the same framed message protocol and work unchanged
//! over in-process channels or TCP sockets.

pub mod aggregate;
pub mod client;
pub mod coordinator;
pub mod message;
pub mod simulation;
pub mod transport;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{
    aggregate_paper13, weighted_average_svm, AggregationMode, AggregationReport, GlobalModel,
    GlobalProvenance,
};
pub use client::{client_train, run_client, ClientConfig};
pub use coordinator::{evaluate_global, run_coordinator, CoordinationOutcome, CoordinatorConfig};
pub use message::{
    decode_frame, encode_frame, Message, WireError, MAX_FRAME_BYTES, PROTOCOL_VERSION,
};
pub use simulation::{
    run_simulation, stage, stage_seed, DataSource, PipelineError, SimConfig, SimOutput,
    TransportKind,
};
pub use transport::{inproc_pair, FramedConn, SendPolicy};

/// Accuracy of one global model revision, measured on the pooled training
/// rows (summed client-side confusions) and on the coordinator's held-out
/// validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round_index: usize,
    pub train_accuracy_pct: f64,
    pub val_accuracy_pct: f64,
}

/// Per-round accuracy history of a federated run, ordered by round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub rounds: Vec<RoundEntry>,
}

impl RoundLog {
    /// True when round indices count 1, 2, 3, ... with no gaps.
    pub fn is_contiguous(&self) -> bool {
        self.rounds
            .iter()
            .enumerate()
            .all(|(i, e)| e.round_index == i + 1)
    }
}

/// Errors raised by the federated layer. Client-side failures are tagged
/// with the client id so multi-process logs stay attributable.
#[derive(Debug, Error)]
pub enum FederationError {
    #[error("wire protocol: {0}")]
    Wire(#[from] WireError),
    #[error("training: {0}")]
    Learn(#[from] crate::learners::LearnError),
    #[error("evaluation: {0}")]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("aggregation needs at least one local model and one shard: {reason}")]
    EmptyShards { reason: String },
    #[error("local models cannot be combined: {reason}")]
    IncompatibleModels { reason: String },
    #[error("fedavg requires every client to train an svm; client {client_id} sent {kind}")]
    HeterogeneousModels {
        client_id: u32,
        kind: crate::learners::ModelKind,
    },
    #[error("protocol violation: expected {expected}, got {got}")]
    Protocol { expected: String, got: String },
    #[error("client {client_id}: {detail}")]
    ClientFailure { client_id: u32, detail: String },
}
