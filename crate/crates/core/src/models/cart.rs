//! Greedy binary tree induction: Gini impurity for classification, variance
//! reduction for regression. Thresholds sit at midpoints between consecutive
//! distinct sorted values; equal-gain ties resolve to the lowest feature
//! index, then the lowest threshold, so training is fully deterministic.

use serde::{Deserialize, Serialize};

use super::{max_path_splits, DecisionTree, ModelError, TreeNode};
use crate::tabular::{Dataset, TaskKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for CartParams {
    fn default() -> CartParams {
        CartParams {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) enum SplitCriterion {
    Gini,
    Variance,
}

pub(crate) struct TreeGrower<'a> {
    pub rows: &'a [Vec<f64>],
    /// Targets the split search runs on (labels for CART, gradients for
    /// boosting).
    pub targets: &'a [f64],
    pub criterion: SplitCriterion,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl<'a> TreeGrower<'a> {
    pub fn grow(&self, leaf_value: &dyn Fn(&[usize]) -> f64) -> TreeNode {
        let idx: Vec<usize> = (0..self.rows.len()).collect();
        self.build(idx, 0, leaf_value)
    }

    fn build(&self, idx: Vec<usize>, depth: usize, leaf_value: &dyn Fn(&[usize]) -> f64) -> TreeNode {
        let make_leaf = |idx: &[usize]| TreeNode::Leaf {
            value: leaf_value(idx),
            cover: idx.len(),
        };

        if idx.len() < self.min_samples_split
            || self.max_depth.is_some_and(|d| depth >= d)
            || self.is_pure(&idx)
        {
            return make_leaf(&idx);
        }

        let Some((feature, threshold)) = self.best_split(&idx) else {
            return make_leaf(&idx);
        };

        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
        debug_assert!(!left_idx.is_empty() && !right_idx.is_empty());

        let cover = idx.len();
        let left = self.build(left_idx, depth + 1, leaf_value);
        let right = self.build(right_idx, depth + 1, leaf_value);
        TreeNode::Split {
            feature_index: feature,
            threshold,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn is_pure(&self, idx: &[usize]) -> bool {
        let first = self.targets[idx[0]];
        idx.iter().all(|&i| self.targets[i] == first)
    }

    /// Exhaustive search over (feature, midpoint threshold) pairs; returns
    /// the first strictly-best candidate scanning features and thresholds in
    /// ascending order.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, f64)> {
        let n = idx.len() as f64;
        let num_features = self.rows[0].len();

        let total_sum: f64 = idx.iter().map(|&i| self.targets[i]).sum();
        let total_sq: f64 = idx.iter().map(|&i| self.targets[i] * self.targets[i]).sum();
        let parent_impurity = self.impurity(idx.len() as f64, total_sum, total_sq);

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(idx.len());

        for feature in 0..num_features {
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (self.rows[i][feature], self.targets[i])));
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN feature value"));

            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for pos in 0..pairs.len() - 1 {
                left_sum += pairs[pos].1;
                left_sq += pairs[pos].1 * pairs[pos].1;
                let (a, b) = (pairs[pos].0, pairs[pos + 1].0);
                if a == b {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = pairs.len() - n_left;
                if n_left < self.min_samples_leaf || n_right < self.min_samples_leaf {
                    continue;
                }
                let imp_left = self.impurity(n_left as f64, left_sum, left_sq);
                let imp_right =
                    self.impurity(n_right as f64, total_sum - left_sum, total_sq - left_sq);
                let gain = parent_impurity
                    - (n_left as f64 / n) * imp_left
                    - (n_right as f64 / n) * imp_right;
                if gain > 0.0 && best.is_none_or(|(g, _, _)| gain > g) {
                    // Midpoint, nudged down if rounding lands it on the
                    // right-hand value (left branch takes `<= threshold`).
                    let mut threshold = 0.5 * (a + b);
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some((gain, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn impurity(&self, n: f64, sum: f64, sum_sq: f64) -> f64 {
        match self.criterion {
            // Binary Gini: 1 - p^2 - (1-p)^2 = 2 p (1 - p).
            SplitCriterion::Gini => {
                let p = sum / n;
                2.0 * p * (1.0 - p)
            }
            // Mean squared deviation from the node mean.
            SplitCriterion::Variance => (sum_sq - sum * sum / n).max(0.0) / n,
        }
    }
}

/// Train a single decision tree. `_seed` is part of the interface for parity
/// with the other trainers; tie-breaking is deterministic so it is unused.
pub fn fit_cart(
    train: &Dataset,
    params: &CartParams,
    _seed: u64,
) -> Result<DecisionTree, ModelError> {
    if train.num_rows() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let criterion = match train.task {
        TaskKind::Classification => SplitCriterion::Gini,
        TaskKind::Regression => SplitCriterion::Variance,
    };
    let grower = TreeGrower {
        rows: &train.rows,
        targets: &train.targets,
        criterion,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split.max(2),
        min_samples_leaf: params.min_samples_leaf.max(1),
    };
    let targets = &train.targets;
    let root = grower.grow(&|idx: &[usize]| {
        idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64
    });
    let max_depth_observed = max_path_splits(&root);
    Ok(DecisionTree {
        root,
        task: train.task,
        num_features: train.num_features(),
        max_depth_observed,
    })
}
