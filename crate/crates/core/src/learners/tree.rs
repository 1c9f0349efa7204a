//! Decision tree with greedy multiway categorical splits chosen by
//! information gain (entropy, in bits).
//!
//! Every internal node has one child per feature value observed in its
//! training rows. A split is only taken when every child would hold at least
//! `min_leaf` rows and the gain is positive; ties in gain go to the lowest
//! feature index. Feature importances accumulate `node_fraction * gain` per
//! split and are normalized to sum to one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::learners::{entropy_from_counts, LearnError, TrainSet};

/// Split quality criterion. Only entropy-based information gain is offered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Entropy,
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "entropy")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtHyper {
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for DtHyper {
    fn default() -> Self {
        DtHyper {
            criterion: Criterion::Entropy,
            max_depth: 8,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        class: Label,
        class_counts: [usize; 2],
    },
    Split {
        split_feature: usize,
        /// One child per feature value observed during training.
        #[serde(with = "children_keys")]
        children: BTreeMap<u8, TreeNode>,
        class_counts: [usize; 2],
    },
}

/// JSON object keys are strings, so the children map is written and read
/// with explicit string keys. Doing the conversion by hand keeps the map
/// decodable from serde's buffered representations (tagged enums, flattened
/// envelopes), which do not apply the usual integer-key shortcut.
mod children_keys {
    use super::TreeNode;
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        children: &BTreeMap<u8, TreeNode>,
        serializer: S,
    ) -> Result<S::Ok, S::Error> {
        let keyed: BTreeMap<String, &TreeNode> =
            children.iter().map(|(k, v)| (k.to_string(), v)).collect();
        keyed.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<BTreeMap<u8, TreeNode>, D::Error> {
        BTreeMap::<String, TreeNode>::deserialize(deserializer)?
            .into_iter()
            .map(|(k, v)| {
                k.parse::<u8>()
                    .map(|k| (k, v))
                    .map_err(|_| D::Error::custom(format!("invalid child bin key {k:?}")))
            })
            .collect()
    }
}

impl TreeNode {
    /// Majority class of the rows that reached this node; ties go to the
    /// non-carrier class.
    pub fn majority(&self) -> Label {
        let counts = self.class_counts();
        if counts[1] > counts[0] {
            Label::Carrier
        } else {
            Label::NonCarrier
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        match self {
            TreeNode::Leaf { class_counts, .. } | TreeNode::Split { class_counts, .. } => {
                *class_counts
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { children, .. } => {
                1 + children.values().map(TreeNode::depth).max().unwrap_or(0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTreeModel {
    pub root: TreeNode,
    pub hyper: DtHyper,
    /// Normalized information-gain contribution per feature; all zero for a
    /// single-leaf tree.
    pub feature_importances: Vec<f64>,
}

/// Trains a tree by greedy recursive partitioning.
///
/// Recursion stops on purity, `max_depth`, `min_leaf` (no feature can split
/// without producing an undersized child), or zero information gain.
pub fn train_dt(data: &TrainSet, hyper: &DtHyper) -> Result<DecisionTreeModel, LearnError> {
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let all_rows: Vec<usize> = (0..data.len()).collect();
    let mut importances = vec![0.0; data.cardinality.len()];
    let root = build(data, hyper, &all_rows, 0, data.len(), &mut importances);
    let total: f64 = importances.iter().sum();
    if total > 0.0 {
        for imp in &mut importances {
            *imp /= total;
        }
    }
    Ok(DecisionTreeModel {
        root,
        hyper: *hyper,
        feature_importances: importances,
    })
}

fn label_counts(data: &TrainSet, rows: &[usize]) -> [usize; 2] {
    let mut counts = [0usize; 2];
    for &i in rows {
        counts[usize::from(data.labels[i].as_bit())] += 1;
    }
    counts
}

fn leaf(counts: [usize; 2]) -> TreeNode {
    TreeNode::Leaf {
        class: if counts[1] > counts[0] {
            Label::Carrier
        } else {
            Label::NonCarrier
        },
        class_counts: counts,
    }
}

/// The best split of `rows`: feature index, gain, and the rows grouped by
/// that feature's values. Candidates must split into at least two children,
/// each holding `min_leaf`+ rows. Ties in gain go to the lowest feature.
fn best_split(
    data: &TrainSet,
    hyper: &DtHyper,
    rows: &[usize],
    parent_entropy: f64,
) -> Option<(usize, f64, BTreeMap<u8, Vec<usize>>)> {
    let n = rows.len() as f64;
    let mut best: Option<(usize, f64, BTreeMap<u8, Vec<usize>>)> = None;
    for f in 0..data.cardinality.len() {
        let mut groups: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
        for &i in rows {
            groups.entry(data.rows[i][f]).or_default().push(i);
        }
        if groups.len() < 2 || groups.values().any(|g| g.len() < hyper.min_leaf) {
            continue;
        }
        let child_entropy: f64 = groups
            .values()
            .map(|g| g.len() as f64 / n * entropy_from_counts(&label_counts(data, g)))
            .sum();
        let gain = parent_entropy - child_entropy;
        if gain <= 1e-12 {
            continue;
        }
        if best.as_ref().is_none_or(|(_, g, _)| gain > *g) {
            best = Some((f, gain, groups));
        }
    }
    best
}

fn build(
    data: &TrainSet,
    hyper: &DtHyper,
    rows: &[usize],
    depth: usize,
    total_rows: usize,
    importances: &mut [f64],
) -> TreeNode {
    let counts = label_counts(data, rows);
    if counts[0] == 0 || counts[1] == 0 || depth >= hyper.max_depth {
        return leaf(counts);
    }
    let parent_entropy = entropy_from_counts(&counts);
    let Some((feature, gain, groups)) = best_split(data, hyper, rows, parent_entropy) else {
        return leaf(counts);
    };
    importances[feature] += rows.len() as f64 / total_rows as f64 * gain;
    let children = groups
        .into_iter()
        .map(|(value, group)| {
            (
                value,
                build(data, hyper, &group, depth + 1, total_rows, importances),
            )
        })
        .collect();
    TreeNode::Split {
        split_feature: feature,
        children,
        class_counts: counts,
    }
}

/// Predicts by walking the tree; an internal node with no child for `x`'s
/// value falls back to that node's majority class.
pub fn predict_dt(m: &DecisionTreeModel, x: &[u8]) -> Label {
    let mut node = &m.root;
    loop {
        match node {
            TreeNode::Leaf { class, .. } => return *class,
            TreeNode::Split {
                split_feature,
                children,
                ..
            } => match children.get(&x[*split_feature]) {
                Some(child) => node = child,
                None => return node.majority(),
            },
        }
    }
}
