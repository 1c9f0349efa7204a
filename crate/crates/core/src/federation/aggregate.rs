//! Building a global model out of client contributions.
//!
//! The single-shot merge ([`aggregate_paper13`]) walks a fixed recipe:
//! validate the uploads, pool every client's support vectors with duals
//! scaled by `1/k`, average the SVM weight vectors and intercepts as a warm
//! start, average decision-tree feature importances as diagnostics, adopt
//! kernel settings from the first SVM contributor, pool the uploaded shards
//! into one dataset, and finally retrain a linear SVM on the pooled rows
//! warm-started from the merged duals.
//!
//! The iterative merge ([`weighted_average_svm`]) is a parameters-only
//! shard-size-weighted average used once per round by the fedavg loop.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{feature_vector, BinnedRecord, Dataset, Label, FEATURE_COUNT};
use crate::federation::FederationError;
use crate::learners::{
    binned_cardinality, decision_function, Criterion, Kernel, LinearSvmModel, LocalModel,
    ModelIoError, SvmEncoding, SvmHyper, SvmProblem, TrainSet, TrainedModel, MODEL_FILE_VERSION,
};

/// How client contributions are combined into a global model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationMode {
    /// Single round: clients upload models and shards, the coordinator
    /// merges and retrains on the pooled rows.
    Paper13,
    /// Multi-round parameter averaging; shards never leave the clients.
    FedAvg,
}

impl std::fmt::Display for AggregationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AggregationMode::Paper13 => write!(f, "paper13"),
            AggregationMode::FedAvg => write!(f, "fedavg"),
        }
    }
}

impl FromStr for AggregationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper13" => Ok(AggregationMode::Paper13),
            "fedavg" => Ok(AggregationMode::FedAvg),
            other => Err(format!(
                "unknown aggregation mode {other:?} (expected paper13 or fedavg)"
            )),
        }
    }
}

/// Where a global model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalProvenance {
    pub mode: AggregationMode,
    pub round_count: usize,
    pub client_ids: Vec<u32>,
}

/// The coordinator's merged model: a linear SVM plus cross-client
/// diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub svm: LinearSvmModel,
    /// Elementwise mean of contributing decision trees' feature
    /// importances; absent when no tree participated.
    pub mean_feature_importances: Option<Vec<f64>>,
    pub provenance: GlobalProvenance,
}

impl GlobalModel {
    pub fn predict(&self, x: &[u8]) -> Label {
        crate::learners::predict_svm(&self.svm, x)
    }

    pub fn predict_record(&self, rec: &BinnedRecord) -> Label {
        self.predict(&feature_vector(rec))
    }
}

/// A zero-weight SVM global model, used as the fedavg starting point.
pub fn zero_global(hyper: &SvmHyper, mode: AggregationMode) -> GlobalModel {
    let cardinality = binned_cardinality();
    let dim = match hyper.encoding {
        SvmEncoding::Ordinal => FEATURE_COUNT,
        SvmEncoding::OneHot => cardinality.iter().sum(),
    };
    GlobalModel {
        svm: LinearSvmModel::zero(dim, *hyper, cardinality),
        mean_feature_importances: None,
        provenance: GlobalProvenance {
            mode,
            round_count: 0,
            client_ids: Vec::new(),
        },
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GlobalFile {
    version: u32,
    r#type: String,
    #[serde(flatten)]
    model: GlobalModel,
}

/// Serialize a global model for its on-disk JSON file.
pub fn global_to_json(model: &GlobalModel) -> String {
    let file = GlobalFile {
        version: MODEL_FILE_VERSION,
        r#type: "global".to_string(),
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("global models serialize");
    text.push('\n');
    text
}

fn malformed(detail: String) -> ModelIoError {
    ModelIoError::Malformed(<serde_json::Error as serde::de::Error>::custom(detail))
}

/// Parse a global model file, checking its version and type tag.
pub fn global_from_json(text: &str) -> Result<GlobalModel, ModelIoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| malformed("missing version field".into()))?;
    if version != u64::from(MODEL_FILE_VERSION) {
        return Err(ModelIoError::VersionMismatch {
            got: version as u32,
            expected: MODEL_FILE_VERSION,
        });
    }
    let tag = value.get("type").and_then(|v| v.as_str()).unwrap_or("");
    if tag != "global" {
        return Err(malformed(format!(
            "expected a global model file, found type {tag:?}"
        )));
    }
    let file: GlobalFile = serde_json::from_value(value)?;
    Ok(file.model)
}

/// Write a global model file.
pub fn save_global(model: &GlobalModel, path: &Path) -> Result<(), ModelIoError> {
    fs::write(path, global_to_json(model))?;
    Ok(())
}

/// Read a global model file.
pub fn load_global(path: &Path) -> Result<GlobalModel, ModelIoError> {
    let text = fs::read_to_string(path)?;
    global_from_json(&text)
}

/// What went into a merge: which clients contributed what, the adopted
/// hyperparameters, and any degradations encountered along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub svm_clients: Vec<u32>,
    pub dt_clients: Vec<u32>,
    /// Naive-bayes contributors; their parameters are not mergeable into a
    /// linear model, so they are recorded here and flagged in `warnings`.
    pub nb_clients: Vec<u32>,
    /// Support vectors pooled from the clients before retraining.
    pub merged_support_vectors: usize,
    /// Support vectors of the finished global model.
    pub global_support_vectors: usize,
    /// Rows in the pooled training dataset (0 in fedavg mode).
    pub global_rows: usize,
    pub donor_kernel: Kernel,
    pub donor_gamma: f64,
    pub dt_criterion: Option<Criterion>,
    pub dt_max_depth: Option<usize>,
    /// Merged duals that matched no pooled row (0 unless shards and models
    /// disagree about the data).
    pub unmatched_support_vectors: usize,
    pub warnings: Vec<String>,
}

/// Distribute dual weights from support vectors onto matching rows of a
/// training problem, accumulating magnitudes into `alpha`.
///
/// A support vector matches a row when their encoded features are bitwise
/// equal and the row's label sign matches the dual's sign. Duplicate rows
/// are used round-robin, so a set of support vectors that is itself a
/// sub-multiset of the rows maps one-to-one. Returns the number of support
/// vectors that matched nothing.
pub(crate) fn map_duals_onto_rows(
    svs: &[Vec<f64>],
    duals: &[f64],
    rows: &[Vec<f64>],
    labels: &[f64],
    range: std::ops::Range<usize>,
    alpha: &mut [f64],
) -> usize {
    type Key = (Vec<u64>, bool);
    let bits = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| x.to_bits()).collect() };
    let mut slots: HashMap<Key, (Vec<usize>, usize)> = HashMap::new();
    for i in range {
        let key = (bits(&rows[i]), labels[i] > 0.0);
        slots.entry(key).or_default().0.push(i);
    }
    let mut unmatched = 0;
    for (sv, &dual) in svs.iter().zip(duals) {
        let key = (bits(sv), dual > 0.0);
        match slots.get_mut(&key) {
            Some((indices, cursor)) => {
                let idx = indices[*cursor % indices.len()];
                *cursor += 1;
                alpha[idx] += dual.abs();
            }
            None => unmatched += 1,
        }
    }
    unmatched
}

struct SvmContribution<'a> {
    client_id: u32,
    /// Position within the `locals` slice, used to find the matching shard.
    position: usize,
    model: &'a LinearSvmModel,
}

/// Single-shot merge of uploaded local models and shards into a global
/// model.
///
/// `global_hyper` controls the pooled retraining (box parameter, epoch
/// count, shuffle seed); kernel, gamma, and input encoding are adopted from
/// the first SVM contributor. With `global_hyper.epochs == 0` the merged
/// warm start itself becomes the global model: averaged weights and
/// intercept, pooled support vectors, duals scaled by `1/k`.
pub fn aggregate_paper13(
    locals: &[LocalModel],
    shards: &[Dataset<BinnedRecord>],
    global_hyper: &SvmHyper,
) -> Result<(GlobalModel, AggregationReport), FederationError> {
    if locals.is_empty() {
        return Err(FederationError::EmptyShards {
            reason: "no local models".into(),
        });
    }
    if shards.len() != locals.len() {
        return Err(FederationError::EmptyShards {
            reason: format!("{} local models but {} shards", locals.len(), shards.len()),
        });
    }
    if let Some(pos) = shards.iter().position(|s| s.records.is_empty()) {
        return Err(FederationError::EmptyShards {
            reason: format!("client {} uploaded an empty shard", locals[pos].client_id),
        });
    }

    let mut warnings = Vec::new();
    let mut svm_contribs: Vec<SvmContribution> = Vec::new();
    let mut dt_clients = Vec::new();
    let mut nb_clients = Vec::new();
    let mut importance_vecs: Vec<&Vec<f64>> = Vec::new();
    let mut dt_criterion = None;
    let mut dt_max_depth = None;

    for (position, local) in locals.iter().enumerate() {
        match &local.model {
            TrainedModel::Svm(m) => svm_contribs.push(SvmContribution {
                client_id: local.client_id,
                position,
                model: m,
            }),
            TrainedModel::Dt(m) => {
                dt_clients.push(local.client_id);
                importance_vecs.push(&m.feature_importances);
                if dt_criterion.is_none() {
                    dt_criterion = Some(m.hyper.criterion);
                    dt_max_depth = Some(m.hyper.max_depth);
                }
            }
            TrainedModel::Nb(_) => nb_clients.push(local.client_id),
        }
    }

    if !nb_clients.is_empty() {
        warnings.push(format!(
            "naive bayes locals from clients {nb_clients:?} carry no mergeable \
             parameters; they are recorded but do not shape the global svm"
        ));
    }

    // Kernel settings come from the first SVM contributor; without one the
    // global model starts cold from defaults.
    let donor = svm_contribs.first().map(|c| c.model.hyper);
    if donor.is_none() {
        warnings.push(
            "no svm local model; the global svm trains cold with default kernel settings"
                .to_string(),
        );
    }
    let defaults = SvmHyper::default();
    let donor_hyper = donor.unwrap_or(defaults);
    let hyper = SvmHyper {
        kernel: donor_hyper.kernel,
        gamma: donor_hyper.gamma,
        encoding: donor_hyper.encoding,
        c: global_hyper.c,
        epochs: global_hyper.epochs,
        seed: global_hyper.seed,
    };

    for c in &svm_contribs {
        if c.model.hyper.encoding != hyper.encoding {
            return Err(FederationError::IncompatibleModels {
                reason: format!(
                    "client {} svm uses {:?} encoding, expected {:?}",
                    c.client_id, c.model.hyper.encoding, hyper.encoding
                ),
            });
        }
        if c.model.w.len() != svm_contribs[0].model.w.len() {
            return Err(FederationError::IncompatibleModels {
                reason: format!(
                    "client {} svm has {} weights, expected {}",
                    c.client_id,
                    c.model.w.len(),
                    svm_contribs[0].model.w.len()
                ),
            });
        }
    }

    let cardinality = binned_cardinality();
    let dim = match hyper.encoding {
        SvmEncoding::Ordinal => FEATURE_COUNT,
        SvmEncoding::OneHot => cardinality.iter().sum(),
    };

    // Pool support vectors with duals scaled by 1/k, and average weights and
    // intercepts into the warm-start model.
    let k = svm_contribs.len();
    let mut merged_svs: Vec<Vec<f64>> = Vec::new();
    let mut merged_duals: Vec<f64> = Vec::new();
    let mut w0 = vec![0.0; dim];
    let mut b0 = 0.0;
    for c in &svm_contribs {
        merged_svs.extend(c.model.support_vectors.iter().cloned());
        merged_duals.extend(c.model.dual_coefs.iter().map(|d| d / k as f64));
        for (acc, &wi) in w0.iter_mut().zip(&c.model.w) {
            *acc += wi / k as f64;
        }
        b0 += c.model.b / k as f64;
    }

    // Mean feature importances across decision-tree contributors. Each
    // contributor's vector sums to 1 unless its tree never split; a
    // degenerate mean is renormalized (or dropped) so the published
    // diagnostics always form a distribution.
    let mean_feature_importances = if importance_vecs.is_empty() {
        None
    } else {
        let mut mean = vec![0.0; FEATURE_COUNT];
        for v in &importance_vecs {
            for (acc, &x) in mean.iter_mut().zip(v.iter()) {
                *acc += x / importance_vecs.len() as f64;
            }
        }
        let sum: f64 = mean.iter().sum();
        if (sum - 1.0).abs() <= 1e-9 {
            Some(mean)
        } else if sum > 0.0 {
            warnings.push(format!(
                "a contributing tree never split; renormalizing mean feature \
                 importances (sum was {sum:.6})"
            ));
            for x in &mut mean {
                *x /= sum;
            }
            Some(mean)
        } else {
            warnings.push(
                "all contributing trees were single leaves; omitting feature importances"
                    .to_string(),
            );
            None
        }
    };

    // Pool the shards into the global training dataset, remembering each
    // client's row segment so its duals can be mapped onto its own rows.
    let mut pooled = Vec::new();
    let mut segments = Vec::with_capacity(shards.len());
    for shard in shards {
        let start = pooled.len();
        pooled.extend(shard.records.iter().copied());
        segments.push(start..pooled.len());
    }
    let global_ds = Dataset {
        schema: shards[0].schema.clone(),
        records: pooled,
        provenance: format!("pooled({} shards)", shards.len()),
    };
    let global_rows = global_ds.records.len();

    let client_ids: Vec<u32> = locals.iter().map(|l| l.client_id).collect();
    let mut unmatched = 0;

    let svm = if hyper.epochs == 0 {
        // No retraining requested: the merged warm start is the model.
        LinearSvmModel {
            w: w0,
            b: b0,
            support_vectors: merged_svs.clone(),
            dual_coefs: merged_duals.clone(),
            hyper,
            cardinality,
        }
    } else {
        let set = TrainSet::from_binned(&global_ds)?;
        let problem = SvmProblem::from_train_set(&set, hyper.encoding)?;
        let mut alpha0 = vec![0.0; problem.len()];
        for c in &svm_contribs {
            unmatched += map_duals_onto_rows(
                &c.model.support_vectors,
                &c.model.dual_coefs.iter().map(|d| d / k as f64).collect::<Vec<_>>(),
                &problem.rows,
                &problem.labels,
                segments[c.position].clone(),
                &mut alpha0,
            );
        }
        if unmatched > 0 {
            warnings.push(format!(
                "{unmatched} merged support vectors matched no pooled row and were dropped \
                 from the warm start"
            ));
        }
        crate::learners::train_svm_problem(&problem, &hyper, cardinality, Some(alpha0))?
    };

    let report = AggregationReport {
        svm_clients: svm_contribs.iter().map(|c| c.client_id).collect(),
        dt_clients,
        nb_clients,
        merged_support_vectors: merged_svs.len(),
        global_support_vectors: svm.support_vectors.len(),
        global_rows,
        donor_kernel: hyper.kernel,
        donor_gamma: hyper.gamma,
        dt_criterion,
        dt_max_depth,
        unmatched_support_vectors: unmatched,
        warnings,
    };
    let global = GlobalModel {
        svm,
        mean_feature_importances,
        provenance: GlobalProvenance {
            mode: AggregationMode::Paper13,
            round_count: 1,
            client_ids,
        },
    };
    Ok((global, report))
}

/// Shard-size-weighted average of client SVMs: `w` and `b` are averaged
/// with weights `n_c / N`, and the support-vector expansions are pooled with
/// duals scaled by the same weights, so `w == sum(dual_i * sv_i)` keeps
/// holding exactly.
pub fn weighted_average_svm(
    contributions: &[(LinearSvmModel, usize)],
) -> Result<LinearSvmModel, FederationError> {
    if contributions.is_empty() {
        return Err(FederationError::EmptyShards {
            reason: "no svm contributions to average".into(),
        });
    }
    let total: usize = contributions.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FederationError::EmptyShards {
            reason: "all contributions report zero training rows".into(),
        });
    }
    let first = &contributions[0].0;
    for (m, _) in contributions {
        if m.w.len() != first.w.len() || m.hyper.encoding != first.hyper.encoding {
            return Err(FederationError::IncompatibleModels {
                reason: format!(
                    "svm shapes differ: {} weights ({:?}) vs {} weights ({:?})",
                    m.w.len(),
                    m.hyper.encoding,
                    first.w.len(),
                    first.hyper.encoding
                ),
            });
        }
    }
    let mut w = vec![0.0; first.w.len()];
    let mut b = 0.0;
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for (m, n) in contributions {
        let weight = *n as f64 / total as f64;
        for (acc, &wi) in w.iter_mut().zip(&m.w) {
            *acc += weight * wi;
        }
        b += weight * m.b;
        support_vectors.extend(m.support_vectors.iter().cloned());
        dual_coefs.extend(m.dual_coefs.iter().map(|d| d * weight));
    }
    Ok(LinearSvmModel {
        w,
        b,
        support_vectors,
        dual_coefs,
        hyper: first.hyper,
        cardinality: first.cardinality.clone(),
    })
}

/// Mean decision value of several linear models at one encoded point —
/// the reference the merged warm-start model must reproduce.
pub fn mean_decision(models: &[&LinearSvmModel], encoded: &[f64]) -> f64 {
    models
        .iter()
        .map(|m| decision_function(m, encoded))
        .sum::<f64>()
        / models.len() as f64
}
