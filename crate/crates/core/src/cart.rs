//! Classification-tree scenario discovery: binary splits minimizing
//! misclassification error, reduced-error pruning, and extraction of the
//! vulnerable leaves as boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::UncertaintySpace;
use crate::prim::{box_stats, BoxStats, LabeledSamples, ScenarioBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartConfig {
    /// A node needs at least this many points to be split.
    pub min_split: usize,
    /// Each child of a split keeps at least this many points.
    pub min_leaf: usize,
    pub max_depth: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            min_split: 20,
            min_leaf: 10,
            max_depth: 12,
        }
    }
}

impl CartConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 || self.min_split < 2 || self.max_depth == 0 {
            return Err(Error::InvalidConfig(
                "cart: min_leaf >= 1, min_split >= 2, max_depth >= 1 required".into(),
            ));
        }
        if self.min_leaf > self.min_split {
            return Err(Error::InvalidConfig(format!(
                "cart: min_leaf {} must be <= min_split {}",
                self.min_leaf, self.min_split
            )));
        }
        Ok(())
    }
}

/// Left child holds points with `x[split_dim] <= split_value`, right child
/// the rest. Leaf labels are the training majority; ties go to
/// non-vulnerable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        split_dim: usize,
        split_value: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        label: bool,
        n: usize,
        n_vulnerable: usize,
    },
}

impl TreeNode {
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Number of training points the tree's leaf labels get wrong.
    pub fn training_misclassification(&self) -> usize {
        match self {
            TreeNode::Leaf {
                label,
                n,
                n_vulnerable,
            } => {
                if *label {
                    n - n_vulnerable
                } else {
                    *n_vulnerable
                }
            }
            TreeNode::Split { left, right, .. } => {
                left.training_misclassification() + right.training_misclassification()
            }
        }
    }

    pub fn classify(&self, point: &[f64]) -> bool {
        match self {
            TreeNode::Leaf { label, .. } => *label,
            TreeNode::Split {
                split_dim,
                split_value,
                left,
                right,
            } => {
                if point[*split_dim] <= *split_value {
                    left.classify(point)
                } else {
                    right.classify(point)
                }
            }
        }
    }
}

fn majority(n: usize, n_vulnerable: usize) -> bool {
    n_vulnerable > n - n_vulnerable
}

/// Child Gini impurity scaled by child size: 2 v (n - v) / n.
fn weighted_gini(v: usize, n: usize) -> f64 {
    2.0 * v as f64 * (n - v) as f64 / n as f64
}

/// Grows a tree by recursive binary splitting. Candidate thresholds are
/// the midpoints of consecutive distinct sorted values per dimension; the
/// split minimizing total child misclassification wins, ties broken by
/// (smaller dimension, smaller threshold). Recursion stops at purity,
/// `min_split`, `min_leaf`, or `max_depth`.
pub fn grow(data: &LabeledSamples, cfg: &CartConfig) -> Result<TreeNode> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    Ok(grow_node(data, cfg, indices, 0))
}

fn grow_node(data: &LabeledSamples, cfg: &CartConfig, indices: Vec<usize>, depth: usize) -> TreeNode {
    let n = indices.len();
    let n_vulnerable = indices.iter().filter(|&&i| data.labels[i]).count();
    let leaf = |n: usize, v: usize| TreeNode::Leaf {
        label: majority(n, v),
        n,
        n_vulnerable: v,
    };
    let pure = n_vulnerable == 0 || n_vulnerable == n;
    if pure || n < cfg.min_split || depth >= cfg.max_depth {
        return leaf(n, n_vulnerable);
    }

    // Candidates are ranked by misclassification count. That count alone
    // is degenerate on class-imbalanced nodes (every threshold that leaves
    // both children majority-non-vulnerable scores the same), so equal
    // counts are refined by Gini impurity decrease; remaining ties keep
    // the first candidate in (ascending dimension, ascending threshold)
    // order.
    let mut best: Option<(usize, f64, usize, f64)> = None;
    let k = data.k();
    for d in 0..k {
        let mut order: Vec<(f64, bool)> = indices
            .iter()
            .map(|&i| (data.points[i][d], data.labels[i]))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_vulnerable = if order[0].1 { 1 } else { 0 };
        for i in 1..n {
            if order[i].0 > order[i - 1].0 && i >= cfg.min_leaf && n - i >= cfg.min_leaf {
                let threshold = 0.5 * (order[i - 1].0 + order[i].0);
                let lv = left_vulnerable;
                let rv = n_vulnerable - lv;
                let error = lv.min(i - lv) + rv.min(n - i - rv);
                let gini = weighted_gini(lv, i) + weighted_gini(rv, n - i);
                let improves = best.is_none_or(|(e, g, _, _)| {
                    error < e || (error == e && gini < g)
                });
                if improves {
                    best = Some((error, gini, d, threshold));
                }
            }
            if order[i].1 {
                left_vulnerable += 1;
            }
        }
    }

    let Some((_, _, split_dim, split_value)) = best else {
        return leaf(n, n_vulnerable);
    };
    let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
        .into_iter()
        .partition(|&i| data.points[i][split_dim] <= split_value);
    TreeNode::Split {
        split_dim,
        split_value,
        left: Box::new(grow_node(data, cfg, left_idx, depth + 1)),
        right: Box::new(grow_node(data, cfg, right_idx, depth + 1)),
    }
}

/// Bottom-up reduced-error pruning: sibling leaves merge whenever the
/// merged leaf misclassifies no more training points than the pair did.
/// Post-order traversal reaches the fixpoint in one pass.
pub fn prune(tree: &TreeNode) -> TreeNode {
    match tree {
        TreeNode::Leaf { .. } => tree.clone(),
        TreeNode::Split {
            split_dim,
            split_value,
            left,
            right,
        } => {
            let left = prune(left);
            let right = prune(right);
            if let (
                TreeNode::Leaf {
                    n: ln,
                    n_vulnerable: lv,
                    ..
                },
                TreeNode::Leaf {
                    n: rn,
                    n_vulnerable: rv,
                    ..
                },
            ) = (&left, &right)
            {
                let (ln, lv, rn, rv) = (*ln, *lv, *rn, *rv);
                let (n, v) = (ln + rn, lv + rv);
                let merged_error = v.min(n - v);
                let split_error = lv.min(ln - lv) + rv.min(rn - rv);
                if merged_error <= split_error {
                    return TreeNode::Leaf {
                        label: majority(n, v),
                        n,
                        n_vulnerable: v,
                    };
                }
            }
            TreeNode::Split {
                split_dim: *split_dim,
                split_value: *split_value,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// One box per vulnerable-labeled leaf: the path constraints intersected
/// with the space bounds. Boxes have pairwise-disjoint interiors; stats
/// are computed over `data`.
pub fn leaves_to_boxes(
    tree: &TreeNode,
    space: &UncertaintySpace,
    data: &LabeledSamples,
) -> Vec<(ScenarioBox, BoxStats)> {
    let mut out = Vec::new();
    let mut limits = ScenarioBox::full(space.k());
    collect_boxes(tree, space, data, &mut limits, &mut out);
    out
}

fn collect_boxes(
    node: &TreeNode,
    space: &UncertaintySpace,
    data: &LabeledSamples,
    limits: &mut ScenarioBox,
    out: &mut Vec<(ScenarioBox, BoxStats)>,
) {
    match node {
        TreeNode::Leaf { label, .. } => {
            if *label {
                let b = limits.clone();
                let stats = box_stats(&b, data);
                out.push((b, stats));
            }
        }
        TreeNode::Split {
            split_dim,
            split_value,
            left,
            right,
        } => {
            let d = *split_dim;
            let saved = limits.limits[d];
            let (lo, hi) = saved.unwrap_or((space.dims[d].low, space.dims[d].high));

            limits.limits[d] = Some((lo, *split_value));
            collect_boxes(left, space, data, limits, out);
            limits.limits[d] = Some((*split_value, hi));
            collect_boxes(right, space, data, limits, out);
            limits.limits[d] = saved;
        }
    }
}
