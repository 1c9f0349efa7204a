//! From-scratch implementations of the three local models — decision tree,
//! categorical naive Bayes, and linear SVM — over categorical feature
//! vectors, plus the shared training-set representation and the JSON model
//! file format.

mod bayes;
mod svm;
mod tree;

pub use bayes::{predict_nb, predict_nb_posterior, train_nb, NaiveBayesModel};
pub use svm::{
    decision_from_duals, decision_function, encode_row, predict_svm, train_svm,
    train_svm_problem, Kernel, LinearSvmModel, SvmEncoding, SvmHyper, SvmProblem, SV_EPSILON,
};
pub use tree::{predict_dt, train_dt, Criterion, DecisionTreeModel, DtHyper, TreeNode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{feature_vector, BinnedRecord, Dataset, Label, CBC_FEATURE_COUNT, FEATURE_COUNT};

/// Version stamp of the JSON model file format.
pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("laplace alpha {alpha} is negative")]
    NegativeAlpha { alpha: f64 },
    #[error("dataset holds a single class; the SVM needs both")]
    SingleClassDataset,
    #[error("not a distribution: {reason}")]
    NotADistribution { reason: String },
    #[error("row {row} has {got} features, expected {expected}")]
    RowShape { row: usize, got: usize, expected: usize },
    #[error("row {row}, feature {feature}: value {value} outside cardinality {cardinality}")]
    ValueOutOfRange { row: usize, feature: usize, value: u8, cardinality: usize },
    #[error("labels length {labels} does not match row count {rows}")]
    LabelMismatch { rows: usize, labels: usize },
}

/// Which of the three local learners a client runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Nb,
    Svm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Dt => write!(f, "dt"),
            ModelKind::Nb => write!(f, "nb"),
            ModelKind::Svm => write!(f, "svm"),
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dt" => Ok(ModelKind::Dt),
            "nb" => Ok(ModelKind::Nb),
            "svm" => Ok(ModelKind::Svm),
            other => Err(format!("unknown model kind {other:?}; expected dt, nb, or svm")),
        }
    }
}

/// Training data in the categorical form all three learners consume: one row
/// of small non-negative integers per record, a label per row, and the
/// number of categories each feature can take.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub rows: Vec<Vec<u8>>,
    pub labels: Vec<Label>,
    pub cardinality: Vec<usize>,
}

impl TrainSet {
    /// Builds a validated training set. Every row must have one value per
    /// feature and every value must lie below its feature's cardinality.
    pub fn new(
        rows: Vec<Vec<u8>>,
        labels: Vec<Label>,
        cardinality: Vec<usize>,
    ) -> Result<TrainSet, LearnError> {
        if rows.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(LearnError::LabelMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cardinality.len() {
                return Err(LearnError::RowShape {
                    row: i,
                    got: row.len(),
                    expected: cardinality.len(),
                });
            }
            for (f, (&v, &card)) in row.iter().zip(&cardinality).enumerate() {
                if usize::from(v) >= card {
                    return Err(LearnError::ValueOutOfRange {
                        row: i,
                        feature: f,
                        value: v,
                        cardinality: card,
                    });
                }
            }
        }
        Ok(TrainSet {
            rows,
            labels,
            cardinality,
        })
    }

    /// The 11-feature training set of a binned dataset: nine 0-5 CBC bins
    /// followed by the binary gender and age features.
    pub fn from_binned(ds: &Dataset<BinnedRecord>) -> Result<TrainSet, LearnError> {
        let rows = ds
            .records
            .iter()
            .map(|r| feature_vector(r).to_vec())
            .collect();
        TrainSet::new(rows, ds.labels(), binned_cardinality())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Per-class row counts, indexed by `Label::as_bit`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for l in &self.labels {
            counts[usize::from(l.as_bit())] += 1;
        }
        counts
    }
}

/// Cardinalities of the binned feature vector: six bin levels for each CBC
/// feature, two for gender, two for age.
pub fn binned_cardinality() -> Vec<usize> {
    let mut card = vec![6; CBC_FEATURE_COUNT];
    card.extend_from_slice(&[2, 2]);
    debug_assert_eq!(card.len(), FEATURE_COUNT);
    card
}

/// Shannon entropy of a class distribution, in bits, with 0·log0 = 0.
pub fn entropy(class_probs: &[f64]) -> Result<f64, LearnError> {
    let mut sum = 0.0;
    for &p in class_probs {
        if !(0.0..=1.0 + 1e-9).contains(&p) {
            return Err(LearnError::NotADistribution {
                reason: format!("probability {p} outside [0,1]"),
            });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(LearnError::NotADistribution {
            reason: format!("probabilities sum to {sum}"),
        });
    }
    Ok(entropy_unchecked(class_probs))
}

/// Entropy without distribution validation, for internal counted inputs.
pub(crate) fn entropy_unchecked(class_probs: &[f64]) -> f64 {
    class_probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Entropy of a label-count vector.
pub(crate) fn entropy_from_counts(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    entropy_unchecked(&probs)
}

/// A trained model of any of the three kinds, tagged for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TrainedModel {
    Dt(DecisionTreeModel),
    Nb(NaiveBayesModel),
    Svm(LinearSvmModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Dt(_) => ModelKind::Dt,
            TrainedModel::Nb(_) => ModelKind::Nb,
            TrainedModel::Svm(_) => ModelKind::Svm,
        }
    }

    /// Predicts the class of one feature vector.
    pub fn predict(&self, x: &[u8]) -> Label {
        match self {
            TrainedModel::Dt(m) => predict_dt(m, x),
            TrainedModel::Nb(m) => predict_nb(m, x),
            TrainedModel::Svm(m) => predict_svm(m, x),
        }
    }
}

/// Percentage of `set` rows the model classifies correctly.
pub fn training_accuracy_pct(model: &TrainedModel, set: &TrainSet) -> f64 {
    let correct = set
        .rows
        .iter()
        .zip(&set.labels)
        .filter(|(row, &label)| model.predict(row) == label)
        .count();
    100.0 * correct as f64 / set.len() as f64
}

/// A client's trained model plus the metadata the coordinator reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub client_id: u32,
    pub train_size: usize,
    pub train_accuracy_pct: f64,
    /// Contingency of the model's predictions on its own training shard.
    pub train_confusion: crate::metrics::ConfusionMatrix,
    pub model: TrainedModel,
}

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("model file version {got}, this build reads version {expected}")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("malformed model file: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(flatten)]
    model: TrainedModel,
}

/// Renders a model as its JSON file form:
/// `{"version": 1, "type": "dt"|"nb"|"svm", ...}` with floats in full
/// round-trip precision.
pub fn model_to_json(model: &TrainedModel) -> String {
    let file = ModelFile {
        version: MODEL_FILE_VERSION,
        model: model.clone(),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("model serialization cannot fail");
    text.push('\n');
    text
}

/// Parses a JSON model file, checking the version stamp.
pub fn model_from_json(text: &str) -> Result<TrainedModel, ModelIoError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    if let Some(version) = value.get("version").and_then(serde_json::Value::as_u64) {
        if version != u64::from(MODEL_FILE_VERSION) {
            return Err(ModelIoError::VersionMismatch {
                got: version as u32,
                expected: MODEL_FILE_VERSION,
            });
        }
    }
    let file: ModelFile = serde_json::from_value(value)?;
    Ok(file.model)
}

pub fn save_model(model: &TrainedModel, path: &std::path::Path) -> Result<(), ModelIoError> {
    std::fs::write(path, model_to_json(model))?;
    Ok(())
}

pub fn load_model(path: &std::path::Path) -> Result<TrainedModel, ModelIoError> {
    model_from_json(&std::fs::read_to_string(path)?)
}
