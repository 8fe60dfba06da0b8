//! Gradient boosting over regression trees: squared error for regression,
//! logistic loss for binary classification (trees fit to negative gradients
//! of the log-loss on margins, leaf values set by a damped Newton step).

use serde::{Deserialize, Serialize};

use super::cart::{SplitCriterion, TreeGrower};
use super::{max_path_splits, sigmoid, DecisionTree, ModelError, TreeEnsemble};
use crate::tabular::{Dataset, TaskKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbtParams {
    pub num_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbtParams {
    fn default() -> GbtParams {
        GbtParams {
            num_trees: 100,
            learning_rate: 0.3,
            max_depth: 6,
            min_samples_leaf: 1,
        }
    }
}

/// Train a gradient-boosted ensemble. No row or column subsampling is
/// performed, so training is deterministic; `_seed` is interface parity.
pub fn fit_gbt(
    train: &Dataset,
    params: &GbtParams,
    _seed: u64,
) -> Result<TreeEnsemble, ModelError> {
    if train.num_rows() == 0 {
        return Err(ModelError::EmptyDataset);
    }
    let n = train.num_rows();
    let y = &train.targets;

    let base_score = match train.task {
        TaskKind::Regression => y.iter().sum::<f64>() / n as f64,
        TaskKind::Classification => {
            let p = (y.iter().sum::<f64>() / n as f64).clamp(1e-12, 1.0 - 1e-12);
            (p / (1.0 - p)).ln()
        }
    };

    let mut margins = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.num_trees);

    for _ in 0..params.num_trees {
        // Negative gradient of the loss at the current margins.
        let gradients: Vec<f64> = match train.task {
            TaskKind::Regression => (0..n).map(|i| y[i] - margins[i]).collect(),
            TaskKind::Classification => (0..n).map(|i| y[i] - sigmoid(margins[i])).collect(),
        };

        let grower = TreeGrower {
            rows: &train.rows,
            targets: &gradients,
            criterion: SplitCriterion::Variance,
            max_depth: Some(params.max_depth),
            min_samples_split: 2,
            min_samples_leaf: params.min_samples_leaf.max(1),
        };

        let root = match train.task {
            // Squared error: the optimal leaf constant is the mean residual.
            TaskKind::Regression => grower.grow(&|idx: &[usize]| {
                idx.iter().map(|&i| gradients[i]).sum::<f64>() / idx.len() as f64
            }),
            // Log loss: one Newton step, sum(g) / sum(p (1 - p)).
            TaskKind::Classification => {
                let margins_now = &margins;
                grower.grow(&|idx: &[usize]| {
                    let num: f64 = idx.iter().map(|&i| gradients[i]).sum();
                    let den: f64 = idx
                        .iter()
                        .map(|&i| {
                            let p = sigmoid(margins_now[i]);
                            p * (1.0 - p)
                        })
                        .sum();
                    num / den.max(1e-12)
                })
            }
        };

        let tree = DecisionTree {
            max_depth_observed: max_path_splits(&root),
            root,
            task: TaskKind::Regression,
            num_features: train.num_features(),
        };
        for i in 0..n {
            let out = tree
                .predict(&crate::tabular::Instance(train.rows[i].clone()))
                .expect("width matches by construction");
            margins[i] += params.learning_rate * out;
        }
        trees.push(tree);
    }

    Ok(TreeEnsemble {
        trees,
        learning_rate: params.learning_rate,
        base_score,
        task: train.task,
    })
}
