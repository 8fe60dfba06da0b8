//! Brute-force Shapley oracle by subset enumeration. Exponential in the
//! feature count; exists to validate the polynomial tree-Shapley recursion.

use crate::models::{PredictiveModel, TreeNode};
use crate::tabular::Instance;

use super::{ExplainError, Explanation};

const MAX_FEATURES: usize = 15;

/// Conditional expectation of a tree's output given the features in `mask`:
/// known features follow their split, unknown features branch with
/// cover-proportion weights.
fn cond_exp(node: &TreeNode, x: &[f64], mask: u32) -> f64 {
    match node {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split {
            feature_index,
            threshold,
            cover,
            left,
            right,
        } => {
            if mask & (1 << feature_index) != 0 {
                if x[*feature_index] <= *threshold {
                    cond_exp(left, x, mask)
                } else {
                    cond_exp(right, x, mask)
                }
            } else {
                let cl = left.cover() as f64 / *cover as f64;
                let cr = right.cover() as f64 / *cover as f64;
                cl * cond_exp(left, x, mask) + cr * cond_exp(right, x, mask)
            }
        }
    }
}

fn subset_value(model: &PredictiveModel, x: &[f64], mask: u32) -> f64 {
    match model {
        PredictiveModel::Tree(t) => cond_exp(&t.root, x, mask),
        PredictiveModel::Ensemble(e) => {
            e.base_score
                + e.learning_rate
                    * e.trees
                        .iter()
                        .map(|t| cond_exp(&t.root, x, mask))
                        .sum::<f64>()
        }
    }
}

/// Shapley values by full enumeration:
/// `phi_f = sum_S |S|! (n - |S| - 1)! / n! * (v(S + f) - v(S))`.
pub fn brute_force_shapley(
    model: &PredictiveModel,
    x: &Instance,
) -> Result<Explanation, ExplainError> {
    let n = model.num_features();
    if n > MAX_FEATURES {
        return Err(ExplainError::TooManyFeatures {
            n,
            max: MAX_FEATURES,
        });
    }
    let margin = model.predict_margin(x)?;
    let valid_covers = match model {
        PredictiveModel::Tree(t) => t.has_valid_covers(),
        PredictiveModel::Ensemble(e) => e.trees.iter().all(|t| t.has_valid_covers()),
    };
    if !valid_covers {
        return Err(ExplainError::MissingCover);
    }

    let full: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    let values: Vec<f64> = (0..=full)
        .map(|mask| subset_value(model, x.values(), mask))
        .collect();

    let mut factorial = vec![1.0f64; n + 1];
    for i in 1..=n {
        factorial[i] = factorial[i - 1] * i as f64;
    }

    let mut phi = vec![0.0; n];
    for (f, item) in phi.iter_mut().enumerate() {
        let bit = 1u32 << f;
        for mask in 0..=full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[n - 1 - s] / factorial[n];
            *item += weight * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }

    Ok(Explanation {
        weights: phi,
        intervals: None,
        explained_output: margin,
        base_value: Some(values[0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DecisionTree;
    use crate::tabular::TaskKind;

    fn leaf(value: f64, cover: usize) -> TreeNode {
        TreeNode::Leaf { value, cover }
    }

    fn split(feature_index: usize, threshold: f64, left: TreeNode, right: TreeNode) -> TreeNode {
        let cover = left.cover() + right.cover();
        TreeNode::Split {
            feature_index,
            threshold,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn tree(root: TreeNode, num_features: usize) -> PredictiveModel {
        PredictiveModel::Tree(DecisionTree {
            max_depth_observed: crate::models::max_path_splits(&root),
            root,
            task: TaskKind::Classification,
            num_features,
        })
    }

    #[test]
    fn stump_single_feature_value() {
        // v({f}) - v(empty) = a - (0.6 a + 0.4 b) with x on the left.
        let m = tree(split(0, 5.0, leaf(0.2, 6), leaf(0.9, 4)), 1);
        let e = brute_force_shapley(&m, &Instance(vec![3.0])).unwrap();
        assert!((e.weights[0] - 0.4 * (0.2 - 0.9)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_features_equal() {
        let root = split(
            0,
            0.5,
            split(1, 0.5, leaf(0.0, 5), leaf(1.0, 5)),
            split(1, 0.5, leaf(1.0, 5), leaf(0.0, 5)),
        );
        let m = tree(root, 2);
        let e = brute_force_shapley(&m, &Instance(vec![0.0, 0.0])).unwrap();
        assert!((e.weights[0] - e.weights[1]).abs() < 1e-12);
    }

    #[test]
    fn efficiency_recovers_full_value() {
        let root = split(
            1,
            2.0,
            split(0, 1.0, leaf(0.3, 2), leaf(0.7, 3)),
            leaf(0.1, 5),
        );
        let m = tree(root, 3);
        let x = Instance(vec![0.5, 1.0, 9.9]);
        let e = brute_force_shapley(&m, &x).unwrap();
        let total = e.base_value.unwrap() + e.weights.iter().sum::<f64>();
        assert!((total - m.predict(&x).unwrap()).abs() < 1e-12);
        assert_eq!(e.weights[2], 0.0);
    }

    #[test]
    fn too_many_features_rejected() {
        let m = tree(leaf(0.5, 1), 16);
        let err = brute_force_shapley(&m, &Instance(vec![0.0; 16])).unwrap_err();
        assert!(matches!(err, ExplainError::TooManyFeatures { n: 16, .. }));
    }
}
