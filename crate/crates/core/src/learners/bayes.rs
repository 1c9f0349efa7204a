//! Categorical naive Bayes with Laplace smoothing.
//!
//! Class priors are plain relative frequencies; conditional probabilities
//! are Laplace-smoothed per feature value:
//! `(count + alpha) / (class_count + alpha * cardinality)`. Probabilities
//! live as logs in memory but serialize as the underlying counts, which
//! round-trip exactly and avoid non-finite JSON.

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::learners::{LearnError, TrainSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NbCounts", into = "NbCounts")]
pub struct NaiveBayesModel {
    /// log P(class), indexed by `Label::as_bit`.
    pub class_log_priors: [f64; 2],
    /// log P(feature = value | class), as `[class][feature][value]`.
    pub cond_log_prob: Vec<Vec<Vec<f64>>>,
    pub laplace_alpha: f64,
    pub bin_cardinality: Vec<usize>,
    /// Training rows per class — the sufficient statistics behind the logs.
    pub class_counts: [usize; 2],
    /// Occurrences of each feature value per class, as `[class][feature][value]`.
    pub value_counts: Vec<Vec<Vec<usize>>>,
}

/// Serialized form: counts only, logs recomputed on load.
#[derive(Serialize, Deserialize)]
struct NbCounts {
    laplace_alpha: f64,
    bin_cardinality: Vec<usize>,
    class_counts: [usize; 2],
    value_counts: Vec<Vec<Vec<usize>>>,
}

impl From<NbCounts> for NaiveBayesModel {
    fn from(c: NbCounts) -> Self {
        from_counts(c.class_counts, c.value_counts, c.laplace_alpha, c.bin_cardinality)
    }
}

impl From<NaiveBayesModel> for NbCounts {
    fn from(m: NaiveBayesModel) -> Self {
        NbCounts {
            laplace_alpha: m.laplace_alpha,
            bin_cardinality: m.bin_cardinality,
            class_counts: m.class_counts,
            value_counts: m.value_counts,
        }
    }
}

fn from_counts(
    class_counts: [usize; 2],
    value_counts: Vec<Vec<Vec<usize>>>,
    alpha: f64,
    bin_cardinality: Vec<usize>,
) -> NaiveBayesModel {
    let n = class_counts[0] + class_counts[1];
    let class_log_priors =
        [0, 1].map(|c| (class_counts[c] as f64 / n as f64).ln());
    let cond_log_prob = value_counts
        .iter()
        .enumerate()
        .map(|(c, per_feature)| {
            per_feature
                .iter()
                .enumerate()
                .map(|(f, counts)| {
                    let denom = class_counts[c] as f64 + alpha * bin_cardinality[f] as f64;
                    counts
                        .iter()
                        .map(|&count| ((count as f64 + alpha) / denom).ln())
                        .collect()
                })
                .collect()
        })
        .collect();
    NaiveBayesModel {
        class_log_priors,
        cond_log_prob,
        laplace_alpha: alpha,
        bin_cardinality,
        class_counts,
        value_counts,
    }
}

/// Trains the model by counting. `alpha` is the Laplace smoothing strength
/// (0 disables smoothing and zero-frequency values get probability zero).
pub fn train_nb(data: &TrainSet, alpha: f64) -> Result<NaiveBayesModel, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if alpha.is_nan() || alpha < 0.0 {
        return Err(LearnError::NegativeAlpha { alpha });
    }
    let mut value_counts: Vec<Vec<Vec<usize>>> = (0..2)
        .map(|_| data.cardinality.iter().map(|&card| vec![0usize; card]).collect())
        .collect();
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let c = usize::from(label.as_bit());
        for (f, &v) in row.iter().enumerate() {
            value_counts[c][f][usize::from(v)] += 1;
        }
    }
    Ok(from_counts(
        data.class_counts(),
        value_counts,
        alpha,
        data.cardinality.clone(),
    ))
}

/// Class scores as unnormalized log posteriors.
fn log_scores(m: &NaiveBayesModel, x: &[u8]) -> [f64; 2] {
    assert_eq!(
        x.len(),
        m.bin_cardinality.len(),
        "feature vector length mismatch"
    );
    [0, 1].map(|c| {
        let mut score = m.class_log_priors[c];
        for (f, &v) in x.iter().enumerate() {
            let v = usize::from(v);
            assert!(
                v < m.bin_cardinality[f],
                "feature {f} value {v} outside cardinality {}",
                m.bin_cardinality[f]
            );
            score += m.cond_log_prob[c][f][v];
        }
        score
    })
}

/// Predicted class and the normalized two-class posterior.
///
/// Ties go to the non-carrier class. If the input has probability zero under
/// both classes (possible only with `alpha` = 0), the posterior falls back
/// to the class priors.
pub fn predict_nb_posterior(m: &NaiveBayesModel, x: &[u8]) -> (Label, [f64; 2]) {
    let mut scores = log_scores(m, x);
    let max = scores[0].max(scores[1]);
    if max == f64::NEG_INFINITY {
        scores = m.class_log_priors;
    }
    let max = scores[0].max(scores[1]);
    let exps = [0, 1].map(|c| (scores[c] - max).exp());
    let z = exps[0] + exps[1];
    let posterior = [exps[0] / z, exps[1] / z];
    let label = if scores[1] > scores[0] {
        Label::Carrier
    } else {
        Label::NonCarrier
    };
    (label, posterior)
}

/// Predicted class only.
pub fn predict_nb(m: &NaiveBayesModel, x: &[u8]) -> Label {
    predict_nb_posterior(m, x).0
}
