//! Exact path-dependent tree-Shapley values.
//!
//! The polynomial-time recursion tracks, for every subset size, the
//! proportion of feature-subset permutations that flow down each path:
//! each path entry carries the fraction of paths where the feature is
//! missing (`zero_fraction`, the cover proportion) or present
//! (`one_fraction`, whether the instance follows the split). Values are
//! computed in margin space for ensembles, where additivity is exact.

use crate::models::{PredictiveModel, TreeNode};
use crate::tabular::Instance;

use super::{ExplainError, Explanation};

/// Cover-weighted expectation of a tree's output.
pub(crate) fn expectation(node: &TreeNode) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            cover, left, right, ..
        } => {
            let cl = left.cover() as f64 / *cover as f64;
            let cr = right.cover() as f64 / *cover as f64;
            cl * expectation(left) + cr * expectation(right)
        }
    }
}

#[derive(Debug, Clone, Default)]
struct PathItem {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(
    path: &mut [PathItem],
    depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    path[depth] = PathItem {
        feature,
        zero_fraction,
        one_fraction,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    for i in (0..depth).rev() {
        path[i + 1].pweight += one_fraction * path[i].pweight * (i + 1) as f64 / (depth + 1) as f64;
        path[i].pweight = zero_fraction * path[i].pweight * (depth - i) as f64 / (depth + 1) as f64;
    }
}

fn unwind_path(path: &mut [PathItem], depth: usize, index: usize) {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one_fraction != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * (depth + 1) as f64 / ((i + 1) as f64 * one_fraction);
            next_one_portion =
                tmp - path[i].pweight * zero_fraction * (depth - i) as f64 / (depth + 1) as f64;
        } else {
            path[i].pweight =
                path[i].pweight * (depth + 1) as f64 / (zero_fraction * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathItem], depth: usize, index: usize) -> f64 {
    let one_fraction = path[index].one_fraction;
    let zero_fraction = path[index].zero_fraction;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    if one_fraction != 0.0 {
        for i in (0..depth).rev() {
            let tmp = next_one_portion / ((i + 1) as f64 * one_fraction);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero_fraction * (depth - i) as f64;
        }
    } else {
        for i in (0..depth).rev() {
            total += path[i].pweight / (zero_fraction * (depth - i) as f64);
        }
    }
    total * (depth + 1) as f64
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    node: &TreeNode,
    x: &[f64],
    phi: &mut [f64],
    unique_path: &mut [PathItem],
    unique_depth: usize,
    parent_zero_fraction: f64,
    parent_one_fraction: f64,
    parent_feature: Option<usize>,
) {
    extend_path(
        unique_path,
        unique_depth,
        parent_zero_fraction,
        parent_one_fraction,
        parent_feature,
    );
    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..=unique_depth {
                let w = unwound_path_sum(unique_path, unique_depth, i);
                let item = &unique_path[i];
                phi[item.feature.expect("non-root path item has a feature")] +=
                    w * (item.one_fraction - item.zero_fraction) * value;
            }
        }
        TreeNode::Split {
            feature_index,
            threshold,
            cover,
            left,
            right,
        } => {
            let (hot, cold) = if x[*feature_index] <= *threshold {
                (left, right)
            } else {
                (right, left)
            };
            let hot_zero_fraction = hot.cover() as f64 / *cover as f64;
            let cold_zero_fraction = cold.cover() as f64 / *cover as f64;
            let mut incoming_zero_fraction = 1.0;
            let mut incoming_one_fraction = 1.0;
            let mut unique_depth = unique_depth;

            // A feature seen before on this path is merged into one player.
            if let Some(k) =
                (1..=unique_depth).find(|&i| unique_path[i].feature == Some(*feature_index))
            {
                incoming_zero_fraction = unique_path[k].zero_fraction;
                incoming_one_fraction = unique_path[k].one_fraction;
                unwind_path(unique_path, unique_depth, k);
                unique_depth -= 1;
            }

            let (parent_path, child_path) = unique_path.split_at_mut(unique_depth + 1);
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            recurse(
                hot,
                x,
                phi,
                child_path,
                unique_depth + 1,
                hot_zero_fraction * incoming_zero_fraction,
                incoming_one_fraction,
                Some(*feature_index),
            );
            child_path[..parent_path.len()].clone_from_slice(parent_path);
            recurse(
                cold,
                x,
                phi,
                child_path,
                unique_depth + 1,
                cold_zero_fraction * incoming_zero_fraction,
                0.0,
                Some(*feature_index),
            );
        }
    }
}

fn tree_phi(root: &TreeNode, max_depth: usize, x: &[f64], phi: &mut [f64]) {
    let levels = max_depth + 2;
    let mut unique_path = vec![PathItem::default(); levels * (levels + 1) / 2];
    recurse(root, x, phi, &mut unique_path, 0, 1.0, 1.0, None);
}

/// Exact Shapley attributions for a tree model, conditioning unknown
/// features on training cover proportions. The baseline is the
/// cover-weighted expectation of the model's margin output, so
/// `base_value + sum(weights)` equals the margin prediction.
pub fn explain_tree_shapley(
    model: &PredictiveModel,
    x: &Instance,
) -> Result<Explanation, ExplainError> {
    let num_features = model.num_features();
    let margin = model.predict_margin(x)?;

    let mut phi = vec![0.0; num_features];
    let base_value = match model {
        PredictiveModel::Tree(tree) => {
            if !tree.has_valid_covers() {
                return Err(ExplainError::MissingCover);
            }
            tree_phi(&tree.root, tree.max_depth_observed, x.values(), &mut phi);
            expectation(&tree.root)
        }
        PredictiveModel::Ensemble(ensemble) => {
            let mut base = ensemble.base_score;
            let mut tree_contrib = vec![0.0; num_features];
            for tree in &ensemble.trees {
                if !tree.has_valid_covers() {
                    return Err(ExplainError::MissingCover);
                }
                tree_phi(
                    &tree.root,
                    tree.max_depth_observed,
                    x.values(),
                    &mut tree_contrib,
                );
                base += ensemble.learning_rate * expectation(&tree.root);
            }
            for (p, c) in phi.iter_mut().zip(&tree_contrib) {
                *p = ensemble.learning_rate * c;
            }
            base
        }
    };

    Ok(Explanation {
        weights: phi,
        intervals: None,
        explained_output: margin,
        base_value: Some(base_value),
    })
}
