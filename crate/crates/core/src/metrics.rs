//! Confusion-matrix evaluation, accuracy/miss-rate reporting, and
//! plot-ready curve emission.
//!
//! The carrier class is the positive class throughout. Miss rate is defined
//! as `100 - accuracy` (the percentage of misclassified rows), matching the
//! two-column summary layout the reports mirror.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Label;
use crate::federation::RoundLog;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 2x2 contingency counts with carrier as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
}

impl ConfusionMatrix {
    pub fn n(&self) -> usize {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }

    pub fn correct(&self) -> usize {
        self.true_pos + self.true_neg
    }

    pub fn accuracy_pct(&self) -> f64 {
        100.0 * self.correct() as f64 / self.n() as f64
    }

    /// Adds another matrix's counts (used to combine per-client counts).
    pub fn absorb(&mut self, other: &ConfusionMatrix) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.true_neg += other.true_neg;
        self.false_neg += other.false_neg;
    }
}

/// Which split an evaluation describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Validation,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Validation => write!(f, "validation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub accuracy_pct: f64,
    /// Always exactly `100 - accuracy_pct`.
    pub miss_rate_pct: f64,
    /// `100 * tp / (tp + fn)`; absent when no positive rows were evaluated.
    pub sensitivity_pct: Option<f64>,
    /// `100 * tn / (tn + fp)`; absent when no negative rows were evaluated.
    pub specificity_pct: Option<f64>,
    pub n: usize,
    pub split_tag: SplitTag,
}

/// Counts the 2x2 contingency of predictions against labels.
pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&pred, &label) in preds.iter().zip(labels) {
        match (label, pred) {
            (Label::Carrier, Label::Carrier) => cm.true_pos += 1,
            (Label::Carrier, Label::NonCarrier) => cm.false_neg += 1,
            (Label::NonCarrier, Label::NonCarrier) => cm.true_neg += 1,
            (Label::NonCarrier, Label::Carrier) => cm.false_pos += 1,
        }
    }
    Ok(cm)
}

/// Derives the percentage metrics from a confusion matrix.
pub fn report(cm: ConfusionMatrix, split_tag: SplitTag) -> EvalReport {
    let accuracy_pct = cm.accuracy_pct();
    let positives = cm.true_pos + cm.false_neg;
    let negatives = cm.true_neg + cm.false_pos;
    EvalReport {
        confusion: cm,
        accuracy_pct,
        miss_rate_pct: 100.0 - accuracy_pct,
        sensitivity_pct: (positives > 0).then(|| 100.0 * cm.true_pos as f64 / positives as f64),
        specificity_pct: (negatives > 0).then(|| 100.0 * cm.true_neg as f64 / negatives as f64),
        n: cm.n(),
        split_tag,
    }
}

/// Evaluates predictions against labels in one step.
pub fn evaluate(
    preds: &[Label],
    labels: &[Label],
    split_tag: SplitTag,
) -> Result<EvalReport, MetricsError> {
    Ok(report(confusion(preds, labels)?, split_tag))
}

/// One row of a rendered report: a named approach and its evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachReport {
    pub approach: String,
    pub report: EvalReport,
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |p| format!("{p:.4}"))
}

/// Renders reports as a text table — approach, accuracy, miss rate —
/// followed by each approach's 2x2 matrix.
pub fn render_report_text(rows: &[ApproachReport]) -> String {
    let width = rows
        .iter()
        .map(|r| r.approach.len())
        .chain(["approach".len()])
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<width$}  {:>12}  {:>13}\n",
        "approach", "accuracy (%)", "miss rate (%)"
    ));
    for row in rows {
        out.push_str(&format!(
            "{:<width$}  {:>12.4}  {:>13.4}\n",
            row.approach, row.report.accuracy_pct, row.report.miss_rate_pct
        ));
    }
    for row in rows {
        let cm = row.report.confusion;
        out.push('\n');
        out.push_str(&format!(
            "confusion matrix — {} ({}, n={}):\n",
            row.approach, row.report.split_tag, row.report.n
        ));
        out.push_str(&format!(
            "{:<22}  {:>17}  {:>21}\n",
            "", "predicted carrier", "predicted non-carrier"
        ));
        out.push_str(&format!(
            "{:<22}  {:>17}  {:>21}\n",
            "actual carrier", cm.true_pos, cm.false_neg
        ));
        out.push_str(&format!(
            "{:<22}  {:>17}  {:>21}\n",
            "actual non-carrier", cm.false_pos, cm.true_neg
        ));
        out.push_str(&format!(
            "sensitivity: {}%  specificity: {}%\n",
            fmt_opt_pct(row.report.sensitivity_pct),
            fmt_opt_pct(row.report.specificity_pct)
        ));
    }
    out.push_str("\nmiss rate = 100 - accuracy (percentage of misclassified rows).\n");
    out
}

/// Renders reports as CSV with one row per approach.
pub fn render_report_csv(rows: &[ApproachReport]) -> String {
    let mut out = String::from(
        "approach,split,n,tp,fp,tn,fn,accuracy_pct,miss_rate_pct,sensitivity_pct,specificity_pct\n",
    );
    for row in rows {
        let cm = row.report.confusion;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |p| format!("{p:.4}"));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.4},{:.4},{},{}\n",
            row.approach,
            row.report.split_tag,
            row.report.n,
            cm.true_pos,
            cm.false_pos,
            cm.true_neg,
            cm.false_neg,
            row.report.accuracy_pct,
            row.report.miss_rate_pct,
            opt(row.report.sensitivity_pct),
            opt(row.report.specificity_pct),
        ));
    }
    out
}

/// The per-round accuracy series as CSV text: `round,train_acc,val_acc`
/// with six-decimal fixed precision.
pub fn curves_csv_text(log: &RoundLog) -> Result<String, MetricsError> {
    if log.rounds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut out = String::from("round,train_acc,val_acc\n");
    for entry in &log.rounds {
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            entry.round_index, entry.train_accuracy_pct, entry.val_accuracy_pct
        ));
    }
    Ok(out)
}

/// Writes the plot-ready per-round accuracy series to `path`.
pub fn emit_curves(log: &RoundLog, path: &Path) -> Result<(), MetricsError> {
    std::fs::write(path, curves_csv_text(log)?)?;
    Ok(())
}
