//! Soft-margin linear SVM trained by dual coordinate ascent.
//!
//! The objective is per-sample averaged — `(1/2)||w||^2 + (C/n) * sum hinge`
//! — so each dual variable lives in `[0, C/n]` and training is invariant to
//! duplicating the dataset, the property the aggregation layer's
//! identical-shard behavior rests on. The bias is folded into the weight
//! vector as a constant augmented feature during optimization (which removes
//! the dual equality constraint), and the reported intercept is recovered by
//! averaging `y - w·x` over margin support vectors, which coincides with the
//! augmented bias at convergence.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::learners::{LearnError, TrainSet};

/// Dual variables at least this large mark a support vector.
pub const SV_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "linear")
    }
}

/// How categorical inputs become numeric SVM inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvmEncoding {
    /// Feed bin values as the numbers 0-5 (one input per feature).
    Ordinal,
    /// One indicator input per (feature, value) pair.
    OneHot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyper {
    pub kernel: Kernel,
    /// Carried for protocol compatibility; the linear kernel never reads it.
    pub gamma: f64,
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub encoding: SvmEncoding,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            kernel: Kernel::Linear,
            gamma: 1.0,
            c: 1.0,
            epochs: 50,
            seed: 42,
            encoding: SvmEncoding::Ordinal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    /// Training points with dual variables above [`SV_EPSILON`], in the
    /// numeric encoding the model was trained with.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector, so `w = sum dual_i * sv_i`.
    pub dual_coefs: Vec<f64>,
    pub hyper: SvmHyper,
    /// Per-feature categorical cardinalities of the pre-encoding input;
    /// empty when the model was trained on raw numeric rows.
    pub cardinality: Vec<usize>,
}

impl LinearSvmModel {
    /// The all-zero model: decision value 0 everywhere (class 1 by the sign
    /// convention). Used as the initial federated global.
    pub fn zero(dim: usize, hyper: SvmHyper, cardinality: Vec<usize>) -> LinearSvmModel {
        LinearSvmModel {
            w: vec![0.0; dim],
            b: 0.0,
            support_vectors: Vec::new(),
            dual_coefs: Vec::new(),
            hyper,
            cardinality,
        }
    }

    /// Reconstructs `w` from the support vectors and dual coefficients.
    pub fn w_from_duals(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.w.len()];
        for (sv, &dual) in self.support_vectors.iter().zip(&self.dual_coefs) {
            for (wi, &xi) in w.iter_mut().zip(sv) {
                *wi += dual * xi;
            }
        }
        w
    }
}

/// Numeric training problem: encoded rows and ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmProblem {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
}

impl SvmProblem {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<SvmProblem, LearnError> {
        if rows.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        if rows.len() != labels.len() {
            return Err(LearnError::LabelMismatch {
                rows: rows.len(),
                labels: labels.len(),
            });
        }
        let dim = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(LearnError::RowShape {
                    row: i,
                    got: row.len(),
                    expected: dim,
                });
            }
        }
        Ok(SvmProblem { rows, labels })
    }

    /// Encodes a categorical training set; labels map to −1/+1.
    pub fn from_train_set(set: &TrainSet, encoding: SvmEncoding) -> Result<SvmProblem, LearnError> {
        let rows = set
            .rows
            .iter()
            .map(|r| encode_row(r, encoding, &set.cardinality))
            .collect();
        let labels = set.labels.iter().map(|l| l.as_sign()).collect();
        SvmProblem::new(rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Encodes one categorical row for the SVM.
pub fn encode_row(x: &[u8], encoding: SvmEncoding, cardinality: &[usize]) -> Vec<f64> {
    match encoding {
        SvmEncoding::Ordinal => x.iter().map(|&v| f64::from(v)).collect(),
        SvmEncoding::OneHot => {
            let dim: usize = cardinality.iter().sum();
            let mut out = vec![0.0; dim];
            let mut offset = 0;
            for (&v, &card) in x.iter().zip(cardinality) {
                out[offset + usize::from(v)] = 1.0;
                offset += card;
            }
            out
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains on a categorical training set using the hyperparameters' encoding.
pub fn train_svm(data: &TrainSet, hyper: &SvmHyper) -> Result<LinearSvmModel, LearnError> {
    let problem = SvmProblem::from_train_set(data, hyper.encoding)?;
    train_svm_problem(&problem, hyper, data.cardinality.clone(), None)
}

/// Trains on a numeric problem, optionally warm-starting from per-row dual
/// variables (clipped into the feasible box). `cardinality` is carried into
/// the model so categorical inputs can be encoded at prediction time; pass
/// an empty vector for raw numeric problems.
///
/// Runs exactly `hyper.epochs` passes over the rows in seeded random order;
/// with 0 epochs the returned model is the warm start itself.
pub fn train_svm_problem(
    problem: &SvmProblem,
    hyper: &SvmHyper,
    cardinality: Vec<usize>,
    alpha0: Option<Vec<f64>>,
) -> Result<LinearSvmModel, LearnError> {
    if problem.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let n = problem.len();
    let has_pos = problem.labels.iter().any(|&y| y > 0.0);
    let has_neg = problem.labels.iter().any(|&y| y < 0.0);
    if !has_pos || !has_neg {
        return Err(LearnError::SingleClassDataset);
    }

    let dim = problem.rows[0].len();
    let c_eff = hyper.c / n as f64;

    let mut alpha = match alpha0 {
        Some(a) => {
            assert_eq!(a.len(), n, "warm start must carry one dual per row");
            a.into_iter().map(|v| v.clamp(0.0, c_eff)).collect()
        }
        None => vec![0.0; n],
    };

    // Augmented representation: a constant 1 input carries the bias, making
    // the dual a pure box-constrained problem.
    let q_diag: Vec<f64> = problem.rows.iter().map(|r| dot(r, r) + 1.0).collect();
    let mut w_aug = vec![0.0; dim + 1];
    for ((row, &y), &a) in problem.rows.iter().zip(&problem.labels).zip(&alpha) {
        accumulate(&mut w_aug, row, a * y);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let y = problem.labels[i];
            let margin = dot(&w_aug[..dim], &problem.rows[i]) + w_aug[dim];
            let g = y * margin - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c_eff {
                g.max(0.0)
            } else {
                g
            };
            if pg.abs() > 1e-12 {
                let next = (alpha[i] - g / q_diag[i]).clamp(0.0, c_eff);
                let delta = next - alpha[i];
                if delta != 0.0 {
                    accumulate(&mut w_aug, &problem.rows[i], delta * y);
                    alpha[i] = next;
                }
            }
        }
    }

    let w = w_aug[..dim].to_vec();
    let mut margin_b = Vec::new();
    let mut support_vectors = Vec::new();
    let mut dual_coefs = Vec::new();
    for ((row, &y), &a) in problem.rows.iter().zip(&problem.labels).zip(&alpha) {
        if a > SV_EPSILON {
            support_vectors.push(row.clone());
            dual_coefs.push(a * y);
            if c_eff - a > SV_EPSILON {
                margin_b.push(y - dot(&w, row));
            }
        }
    }
    let b = if margin_b.is_empty() {
        0.0
    } else {
        margin_b.iter().sum::<f64>() / margin_b.len() as f64
    };

    Ok(LinearSvmModel {
        w,
        b,
        support_vectors,
        dual_coefs,
        hyper: *hyper,
        cardinality,
    })
}

/// Adds `scale * [row, 1]` to the augmented weight vector.
fn accumulate(w_aug: &mut [f64], row: &[f64], scale: f64) {
    let dim = row.len();
    for (wi, &xi) in w_aug[..dim].iter_mut().zip(row) {
        *wi += scale * xi;
    }
    w_aug[dim] += scale;
}

/// The signed decision value `w·x + b` for an already-encoded input.
pub fn decision_function(m: &LinearSvmModel, encoded: &[f64]) -> f64 {
    assert_eq!(encoded.len(), m.w.len(), "input dimension mismatch");
    dot(&m.w, encoded) + m.b
}

/// The decision value computed from the support-vector expansion,
/// `sum dual_i * (sv_i · x) + b` — numerically equivalent to
/// [`decision_function`].
pub fn decision_from_duals(m: &LinearSvmModel, encoded: &[f64]) -> f64 {
    m.support_vectors
        .iter()
        .zip(&m.dual_coefs)
        .map(|(sv, &dual)| dual * dot(sv, encoded))
        .sum::<f64>()
        + m.b
}

/// Predicts a categorical feature vector: sign of the decision value, with
/// zero mapping to the carrier class.
pub fn predict_svm(m: &LinearSvmModel, x: &[u8]) -> Label {
    let encoded = encode_row(x, m.hyper.encoding, &m.cardinality);
    if decision_function(m, &encoded) >= 0.0 {
        Label::Carrier
    } else {
        Label::NonCarrier
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn hyper(c: f64, epochs: usize) -> SvmHyper {
        SvmHyper {
            c,
            epochs,
            ..SvmHyper::default()
        }
    }

    fn train_raw(rows: Vec<Vec<f64>>, labels: Vec<f64>, h: &SvmHyper) -> LinearSvmModel {
        let problem = SvmProblem::new(rows, labels).unwrap();
        train_svm_problem(&problem, h, Vec::new(), None).unwrap()
    }

    #[test]
    fn two_point_problem_matches_analytic_solution() {
        let m = train_raw(vec![vec![-1.0], vec![1.0]], vec![-1.0, 1.0], &hyper(10.0, 200));
        assert!((m.w[0] - 1.0).abs() < 1e-3, "w = {:?}", m.w);
        assert!(m.b.abs() < 1e-3, "b = {}", m.b);
        assert_eq!(m.support_vectors.len(), 2);
        let mut duals = m.dual_coefs.clone();
        duals.sort_by(f64::total_cmp);
        assert!((duals[0] + 0.5).abs() < 1e-3);
        assert!((duals[1] - 0.5).abs() < 1e-3);
    }

    /// Random 2-D problems that are separable by construction: labels come
    /// from a hidden hyperplane and points within a margin band are pushed
    /// out of it.
    fn separable_problem(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = loop {
            let a = rng.gen_range(-1.0..1.0f64);
            let b = rng.gen_range(-1.0..1.0f64);
            if a * a + b * b > 0.25 {
                break (a, b);
            }
        };
        let c = rng.gen_range(-0.5..0.5f64);
        let norm = (a * a + b * b).sqrt();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let mut x = rng.gen_range(-2.0..2.0f64);
            let mut y = rng.gen_range(-2.0..2.0f64);
            let f = (a * x + b * y + c) / norm;
            if f.abs() < 0.5 {
                // push the point out along the normal to a signed distance
                // of exactly ±0.5, keeping a clean margin band
                let target = if f >= 0.0 { 0.5 } else { -0.5 };
                x += (target - f) * a / norm;
                y += (target - f) * b / norm;
            }
            let f = (a * x + b * y + c) / norm;
            rows.push(vec![x, y]);
            labels.push(if f >= 0.0 { 1.0 } else { -1.0 });
        }
        // guarantee both classes
        rows.push(vec![(2.0 - c) * a / norm / norm, (2.0 - c) * b / norm / norm]);
        labels.push(1.0);
        rows.push(vec![(-2.0 - c) * a / norm / norm, (-2.0 - c) * b / norm / norm]);
        labels.push(-1.0);
        (rows, labels)
    }

    /// Exhaustive coarse-grid separability certificate, independent of the
    /// trained model.
    fn grid_separable(rows: &[Vec<f64>], labels: &[f64]) -> bool {
        let steps: Vec<f64> = (-8..=8).map(|i| f64::from(i) * 0.25).collect();
        let bs: Vec<f64> = (-12..=12).map(|i| f64::from(i) * 0.25).collect();
        for &w0 in &steps {
            for &w1 in &steps {
                for &b in &bs {
                    if rows
                        .iter()
                        .zip(labels)
                        .all(|(r, &y)| y * (w0 * r[0] + w1 * r[1] + b) > 0.0)
                    {
                        return true;
                    }
                }
            }
        }
        false
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let rows = vec![
            vec![0.0, 0.0], vec![0.5, -0.5], vec![-0.5, 0.3], vec![0.2, 0.6],
            vec![3.0, 3.0], vec![3.5, 2.5], vec![2.6, 3.2], vec![3.1, 3.8],
        ];
        let labels = vec![-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
        assert!(grid_separable(&rows, &labels), "oracle: blobs must be separable");
        let m = train_raw(rows.clone(), labels.clone(), &hyper(10.0, 400));
        for (row, &y) in rows.iter().zip(&labels) {
            assert_eq!(decision_function(&m, row).signum(), y);
        }
    }

    #[test]
    fn kkt_conditions_hold_on_random_separable_sets() {
        for seed in 0..20 {
            let (rows, labels) = separable_problem(seed, 18);
            assert!(grid_separable(&rows, &labels), "seed {seed}: not separable");
            let h = hyper(50.0, 600);
            let problem = SvmProblem::new(rows.clone(), labels.clone()).unwrap();
            let m = train_svm_problem(&problem, &h, Vec::new(), None).unwrap();
            let c_eff = h.c / rows.len() as f64;

            // recover alpha per row: zero unless the row is a support vector
            let mut alpha = vec![0.0; rows.len()];
            for (sv, &dual) in m.support_vectors.iter().zip(&m.dual_coefs) {
                let i = rows
                    .iter()
                    .position(|r| r == sv)
                    .expect("support vector must be a training row");
                alpha[i] = dual.abs();
            }

            for i in 0..rows.len() {
                let f = decision_function(&m, &rows[i]);
                let yf = labels[i] * f;
                if alpha[i] <= SV_EPSILON {
                    assert!(yf >= 1.0 - 1e-3, "seed {seed} row {i}: yf = {yf}");
                } else if c_eff - alpha[i] > SV_EPSILON {
                    assert!((yf - 1.0).abs() <= 1e-2, "seed {seed} row {i}: yf = {yf}");
                }
            }
        }
    }

    #[test]
    fn duplication_leaves_weights_unchanged() {
        let (rows, labels) = separable_problem(99, 10);
        // flip two labels so the problem is not trivially separable
        let mut labels = labels;
        labels[0] = -labels[0];
        labels[5] = -labels[5];
        let h = hyper(1.0, 2000);
        let single = train_raw(rows.clone(), labels.clone(), &h);
        let mut tripled_rows = Vec::new();
        let mut tripled_labels = Vec::new();
        for _ in 0..3 {
            tripled_rows.extend(rows.iter().cloned());
            tripled_labels.extend(labels.iter().cloned());
        }
        let tripled = train_raw(tripled_rows, tripled_labels, &h);
        for (a, b) in single.w.iter().zip(&tripled.w) {
            assert!((a - b).abs() < 1e-6, "w: {:?} vs {:?}", single.w, tripled.w);
        }
        assert!((single.b - tripled.b).abs() < 1e-6, "b: {} vs {}", single.b, tripled.b);
    }

    #[test]
    fn w_matches_support_vector_expansion() {
        let (rows, labels) = separable_problem(7, 20);
        let m = train_raw(rows, labels, &hyper(10.0, 300));
        let rebuilt = m.w_from_duals();
        for (a, b) in m.w.iter().zip(&rebuilt) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let via_w = decision_function(&m, &x);
            let via_duals = decision_from_duals(&m, &x);
            assert!((via_w - via_duals).abs() < 1e-9);
        }
    }

    #[test]
    fn dual_coefficients_respect_the_box() {
        let (rows, labels) = separable_problem(13, 16);
        let h = hyper(2.0, 300);
        let c_eff = h.c / (rows.len()) as f64;
        let m = train_raw(rows, labels, &h);
        assert!(!m.support_vectors.is_empty());
        for &dual in &m.dual_coefs {
            assert!(dual.abs() > SV_EPSILON);
            assert!(dual.abs() <= c_eff + 1e-15);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let problem = SvmProblem::new(vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            train_svm_problem(&problem, &SvmHyper::default(), Vec::new(), None),
            Err(LearnError::SingleClassDataset)
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let (rows, labels) = separable_problem(21, 15);
        let a = train_raw(rows.clone(), labels.clone(), &hyper(1.0, 80));
        let b = train_raw(rows, labels, &hyper(1.0, 80));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn predict_sign_convention() {
        let mut m = LinearSvmModel::zero(11, SvmHyper::default(), crate::learners::binned_cardinality());
        m.w[0] = 1.0;
        let mut x = [0u8; 11];
        x[0] = 5;
        assert_eq!(predict_svm(&m, &x), Label::Carrier);
        // all-zero weights, negative bias: always non-carrier
        m.w[0] = 0.0;
        m.b = -0.5;
        assert_eq!(predict_svm(&m, &x), Label::NonCarrier);
        // decision value exactly zero maps to carrier
        m.b = 0.0;
        assert_eq!(predict_svm(&m, &x), Label::Carrier);
    }

    #[test]
    fn warm_start_with_zero_epochs_reproduces_the_solution() {
        let (rows, labels) = separable_problem(31, 14);
        let h = hyper(5.0, 800);
        let problem = SvmProblem::new(rows.clone(), labels.clone()).unwrap();
        let trained = train_svm_problem(&problem, &h, Vec::new(), None).unwrap();

        let mut alpha0 = vec![0.0; rows.len()];
        for (sv, &dual) in trained.support_vectors.iter().zip(&trained.dual_coefs) {
            let i = rows.iter().position(|r| r == sv).unwrap();
            alpha0[i] = dual.abs();
        }
        let frozen =
            train_svm_problem(&problem, &hyper(5.0, 0), Vec::new(), Some(alpha0)).unwrap();
        for (a, b) in trained.w.iter().zip(&frozen.w) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((trained.b - frozen.b).abs() < 1e-12);
        assert_eq!(trained.support_vectors.len(), frozen.support_vectors.len());
    }

    #[test]
    fn one_hot_encoding_trains_and_predicts() {
        // label = (feature0 == 2), a rule ordinal weights cannot express
        // exactly but one-hot can.
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for v in 0u8..4 {
            for _ in 0..4 {
                rows.push(vec![v, 0]);
                labels.push(Label::from_bit(u8::from(v == 2)).unwrap());
            }
        }
        let set = TrainSet::new(rows, labels, vec![4, 2]).unwrap();
        let h = SvmHyper {
            encoding: SvmEncoding::OneHot,
            c: 50.0,
            epochs: 500,
            ..SvmHyper::default()
        };
        let m = train_svm(&set, &h).unwrap();
        assert_eq!(m.w.len(), 6);
        for v in 0u8..4 {
            let want = if v == 2 { Label::Carrier } else { Label::NonCarrier };
            assert_eq!(predict_svm(&m, &[v, 0]), want, "value {v}");
        }
    }

    #[test]
    fn zero_model_predicts_carrier_everywhere() {
        let m = LinearSvmModel::zero(2, SvmHyper::default(), vec![6, 6]);
        assert_eq!(predict_svm(&m, &[3, 1]), Label::Carrier);
        assert!(m.support_vectors.is_empty());
    }
}
