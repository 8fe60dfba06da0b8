//! Tree-based predictive models: a white-box decision tree trained with CART
//! and a black-box gradient-boosted ensemble, with the path introspection the
//! evaluation phases rely on.

mod cart;
mod gbt;
mod interval;

pub use cart::{fit_cart, CartParams};
pub use gbt::{fit_gbt, GbtParams};
pub use interval::{FeatureIntervalMap, Interval};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tabular::{Dataset, Instance, TaskKind};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("instance width {found} does not match model width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("model task does not match dataset task")]
    TaskMismatch,
}

/// A binary tree node. Split nodes send `value <= threshold` left and carry
/// the number of training rows that reached them (`cover`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        #[serde(rename = "feature")]
        feature_index: usize,
        threshold: f64,
        cover: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        #[serde(rename = "leaf")]
        value: f64,
        cover: usize,
    },
}

impl TreeNode {
    pub fn cover(&self) -> usize {
        match self {
            TreeNode::Split { cover, .. } | TreeNode::Leaf { cover, .. } => *cover,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

/// A single decision tree. Leaf values are class-1 probabilities for
/// classification trees and plain values for regression trees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: TreeNode,
    pub task: TaskKind,
    pub num_features: usize,
    /// Number of split nodes on the longest root-to-leaf path.
    pub max_depth_observed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Took the left branch: `value <= threshold`.
    Le,
    /// Took the right branch: `value > threshold`.
    Gt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub feature_index: usize,
    pub threshold: f64,
    pub direction: Direction,
}

/// The root-to-leaf trace an instance follows through a tree.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionPath {
    pub steps: Vec<PathStep>,
    pub leaf_value: f64,
}

impl DecisionTree {
    fn check_width(&self, x: &Instance) -> Result<(), ModelError> {
        if x.len() != self.num_features {
            return Err(ModelError::WidthMismatch {
                expected: self.num_features,
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &Instance) -> Result<f64, ModelError> {
        self.check_width(x)?;
        Ok(predict_values(&self.root, x.values()))
    }

    pub fn decision_path(&self, x: &Instance) -> Result<DecisionPath, ModelError> {
        self.check_width(x)?;
        let mut steps = Vec::new();
        let mut node = &self.root;
        loop {
            match node {
                TreeNode::Leaf { value, .. } => {
                    return Ok(DecisionPath {
                        steps,
                        leaf_value: *value,
                    });
                }
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    let goes_left = x[*feature_index] <= *threshold;
                    steps.push(PathStep {
                        feature_index: *feature_index,
                        threshold: *threshold,
                        direction: if goes_left { Direction::Le } else { Direction::Gt },
                    });
                    node = if goes_left { left } else { right };
                }
            }
        }
    }

    /// The unique features on the instance's decision path.
    pub fn true_features(&self, x: &Instance) -> Result<BTreeSet<usize>, ModelError> {
        Ok(self
            .decision_path(x)?
            .steps
            .iter()
            .map(|s| s.feature_index)
            .collect())
    }

    /// Per path feature, the value range consistent with the decision path:
    /// the intersection of `(-inf, t]` for every `<=` step and `(t, +inf)`
    /// for every `>` step on that feature.
    pub fn path_intervals(&self, x: &Instance) -> Result<FeatureIntervalMap, ModelError> {
        let path = self.decision_path(x)?;
        let mut map = FeatureIntervalMap::new();
        for step in &path.steps {
            let constraint = match step.direction {
                Direction::Le => Interval::new(f64::NEG_INFINITY, step.threshold),
                Direction::Gt => Interval::new(step.threshold, f64::INFINITY),
            };
            map.entry(step.feature_index)
                .and_modify(|iv| *iv = iv.intersect(&constraint))
                .or_insert(constraint);
        }
        Ok(map)
    }

    pub fn count_splits(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    pub fn count_leaves(&self) -> usize {
        fn walk(node: &TreeNode) -> usize {
            match node {
                TreeNode::Leaf { .. } => 1,
                TreeNode::Split { left, right, .. } => walk(left) + walk(right),
            }
        }
        walk(&self.root)
    }

    /// True when every node has a positive cover and split covers equal the
    /// sum of their children. Explainers that condition on cover proportions
    /// require this.
    pub fn has_valid_covers(&self) -> bool {
        fn walk(node: &TreeNode) -> bool {
            match node {
                TreeNode::Leaf { cover, .. } => *cover > 0,
                TreeNode::Split {
                    cover, left, right, ..
                } => *cover == left.cover() + right.cover() && walk(left) && walk(right),
            }
        }
        walk(&self.root)
    }
}

fn predict_values(root: &TreeNode, values: &[f64]) -> f64 {
    let mut node = root;
    loop {
        match node {
            TreeNode::Leaf { value, .. } => return *value,
            TreeNode::Split {
                feature_index,
                threshold,
                left,
                right,
                ..
            } => {
                node = if values[*feature_index] <= *threshold {
                    left
                } else {
                    right
                };
            }
        }
    }
}

pub(crate) fn max_path_splits(node: &TreeNode) -> usize {
    match node {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Split { left, right, .. } => 1 + max_path_splits(left).max(max_path_splits(right)),
    }
}

/// Gradient-boosted ensemble of regression trees over margins.
/// Prediction is `base_score + learning_rate * sum(tree outputs)`, passed
/// through a sigmoid for classification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub trees: Vec<DecisionTree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub task: TaskKind,
}

impl TreeEnsemble {
    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn num_features(&self) -> usize {
        self.trees.first().map_or(0, |t| t.num_features)
    }

    fn check_width(&self, x: &Instance) -> Result<(), ModelError> {
        if let Some(t) = self.trees.first() {
            if x.len() != t.num_features {
                return Err(ModelError::WidthMismatch {
                    expected: t.num_features,
                    found: x.len(),
                });
            }
        }
        Ok(())
    }

    /// Margin-space prediction using the first `num` trees.
    pub fn margin_with_trees(&self, x: &Instance, num: usize) -> Result<f64, ModelError> {
        self.check_width(x)?;
        let sum: f64 = self.trees[..num.min(self.trees.len())]
            .iter()
            .map(|t| predict_values(&t.root, x.values()))
            .sum();
        Ok(self.base_score + self.learning_rate * sum)
    }

    pub fn margin(&self, x: &Instance) -> Result<f64, ModelError> {
        self.margin_with_trees(x, self.trees.len())
    }

    pub fn predict(&self, x: &Instance) -> Result<f64, ModelError> {
        let m = self.margin(x)?;
        Ok(match self.task {
            TaskKind::Classification => sigmoid(m),
            TaskKind::Regression => m,
        })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Either predictive model behind one interface. Classification predictions
/// are the probability of class 1; regression predictions are plain values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictiveModel {
    Tree(DecisionTree),
    Ensemble(TreeEnsemble),
}

impl PredictiveModel {
    pub fn task(&self) -> TaskKind {
        match self {
            PredictiveModel::Tree(t) => t.task,
            PredictiveModel::Ensemble(e) => e.task,
        }
    }

    pub fn num_features(&self) -> usize {
        match self {
            PredictiveModel::Tree(t) => t.num_features,
            PredictiveModel::Ensemble(e) => e.num_features(),
        }
    }

    pub fn predict(&self, x: &Instance) -> Result<f64, ModelError> {
        match self {
            PredictiveModel::Tree(t) => t.predict(x),
            PredictiveModel::Ensemble(e) => e.predict(x),
        }
    }

    /// Margin-space prediction: identical to `predict` for single trees and
    /// for regression ensembles; the pre-sigmoid score for classification
    /// ensembles.
    pub fn predict_margin(&self, x: &Instance) -> Result<f64, ModelError> {
        match self {
            PredictiveModel::Tree(t) => t.predict(x),
            PredictiveModel::Ensemble(e) => e.margin(x),
        }
    }

    /// For classification, the class predicted at the 0.5 threshold.
    pub fn predicted_class(&self, x: &Instance) -> Result<u8, ModelError> {
        let p = self.predict(x)?;
        Ok(if p >= 0.5 { 1 } else { 0 })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<PredictiveModel, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Accuracy metrics on a held-out set: F1 of class 1 at the 0.5 threshold
/// for classification; MAE and MAPE for regression. Instances with
/// `|target| < 1e-9` are skipped for MAPE and counted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub f1: Option<f64>,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
    pub mape_skipped: usize,
}

pub fn eval_accuracy(
    model: &PredictiveModel,
    test: &Dataset,
) -> Result<AccuracyReport, ModelError> {
    if model.task() != test.task {
        return Err(ModelError::TaskMismatch);
    }
    match test.task {
        TaskKind::Classification => {
            let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
            for i in 0..test.num_rows() {
                let p = model.predict(&test.instance(i))?;
                let pred = p >= 0.5;
                let actual = test.targets[i] == 1.0;
                match (pred, actual) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fne += 1,
                    (false, false) => {}
                }
            }
            let denom = 2 * tp + fp + fne;
            let f1 = if denom == 0 {
                0.0
            } else {
                2.0 * tp as f64 / denom as f64
            };
            Ok(AccuracyReport {
                f1: Some(f1),
                mae: None,
                mape: None,
                mape_skipped: 0,
            })
        }
        TaskKind::Regression => {
            let mut abs_sum = 0.0;
            let mut pct_sum = 0.0;
            let mut pct_n = 0usize;
            let mut skipped = 0usize;
            for i in 0..test.num_rows() {
                let pred = model.predict(&test.instance(i))?;
                let target = test.targets[i];
                abs_sum += (pred - target).abs();
                if target.abs() < 1e-9 {
                    skipped += 1;
                } else {
                    pct_sum += (pred - target).abs() / target.abs();
                    pct_n += 1;
                }
            }
            let n = test.num_rows() as f64;
            Ok(AccuracyReport {
                f1: None,
                mae: Some(abs_sum / n),
                mape: (pct_n > 0).then(|| pct_sum / pct_n as f64),
                mape_skipped: skipped,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn leaf(value: f64, cover: usize) -> TreeNode {
        TreeNode::Leaf { value, cover }
    }

    pub(crate) fn split(
        feature_index: usize,
        threshold: f64,
        left: TreeNode,
        right: TreeNode,
    ) -> TreeNode {
        let cover = left.cover() + right.cover();
        TreeNode::Split {
            feature_index,
            threshold,
            cover,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    fn tree(root: TreeNode, task: TaskKind, num_features: usize) -> DecisionTree {
        let depth = max_path_splits(&root);
        DecisionTree {
            root,
            task,
            num_features,
            max_depth_observed: depth,
        }
    }

    #[test]
    fn single_leaf_predicts_constant() {
        let t = tree(leaf(0.8, 10), TaskKind::Classification, 3);
        let x = Instance(vec![1.0, 2.0, 3.0]);
        assert_eq!(t.predict(&x).unwrap(), 0.8);
        assert!(t.true_features(&x).unwrap().is_empty());
    }

    #[test]
    fn width_mismatch_rejected() {
        let t = tree(leaf(0.5, 1), TaskKind::Classification, 2);
        let err = t.predict(&Instance(vec![1.0])).unwrap_err();
        assert!(matches!(
            err,
            ModelError::WidthMismatch {
                expected: 2,
                found: 1
            }
        ));
    }

    #[test]
    fn stump_path_and_features() {
        let t = tree(
            split(2, 5.0, leaf(0.2, 6), leaf(0.9, 4)),
            TaskKind::Classification,
            4,
        );
        let x = Instance(vec![0.0, 0.0, 3.0, 0.0]);
        let path = t.decision_path(&x).unwrap();
        assert_eq!(path.steps.len(), 1);
        assert_eq!(path.steps[0].feature_index, 2);
        assert_eq!(path.steps[0].direction, Direction::Le);
        assert_eq!(path.leaf_value, 0.2);
        assert_eq!(
            t.true_features(&x).unwrap(),
            BTreeSet::from([2])
        );
    }

    #[test]
    fn diabetes_figure_path() {
        // Glucose (f0) <= 127.5, then Pregnancies (f1) > 5 -> positive.
        let t = tree(
            split(
                0,
                127.5,
                split(1, 5.0, leaf(0.1, 40), leaf(0.9, 20)),
                leaf(0.7, 40),
            ),
            TaskKind::Classification,
            2,
        );
        let x = Instance(vec![100.0, 7.0]);
        assert_eq!(t.true_features(&x).unwrap(), BTreeSet::from([0, 1]));
        let iv = t.path_intervals(&x).unwrap();
        assert_eq!(iv[&0], Interval::new(f64::NEG_INFINITY, 127.5));
        assert_eq!(iv[&1], Interval::new(5.0, f64::INFINITY));
    }

    #[test]
    fn repeated_feature_intervals_intersect() {
        // f0 <= 10 then f0 > 3 -> (3, 10]
        let t = tree(
            split(
                0,
                10.0,
                split(0, 3.0, leaf(0.0, 5), leaf(1.0, 5)),
                leaf(0.5, 5),
            ),
            TaskKind::Classification,
            1,
        );
        let iv = t.path_intervals(&Instance(vec![7.0])).unwrap();
        assert_eq!(iv[&0], Interval::new(3.0, 10.0));
    }

    #[test]
    fn ensemble_zero_trees_is_base_score() {
        let e = TreeEnsemble {
            trees: vec![],
            learning_rate: 0.3,
            base_score: 4.5,
            task: TaskKind::Regression,
        };
        assert_eq!(e.predict(&Instance(vec![1.0])).unwrap(), 4.5);
    }

    #[test]
    fn cover_validation() {
        let good = tree(
            split(0, 1.0, leaf(0.0, 3), leaf(1.0, 2)),
            TaskKind::Classification,
            1,
        );
        assert!(good.has_valid_covers());
        let bad = DecisionTree {
            root: TreeNode::Split {
                feature_index: 0,
                threshold: 1.0,
                cover: 9,
                left: Box::new(leaf(0.0, 3)),
                right: Box::new(leaf(1.0, 2)),
            },
            task: TaskKind::Classification,
            num_features: 1,
            max_depth_observed: 1,
        };
        assert!(!bad.has_valid_covers());
    }

    #[test]
    fn accuracy_perfect_f1() {
        let t = tree(
            split(0, 0.5, leaf(0.0, 2), leaf(1.0, 2)),
            TaskKind::Classification,
            1,
        );
        let d = Dataset {
            schema: vec![],
            rows: vec![vec![0.0], vec![1.0], vec![0.2], vec![0.9]],
            targets: vec![0.0, 1.0, 0.0, 1.0],
            task: TaskKind::Classification,
        };
        let model = PredictiveModel::Tree(t);
        let acc = eval_accuracy(&model, &d).unwrap();
        assert_eq!(acc.f1, Some(1.0));
    }

    #[test]
    fn accuracy_regression_mae_mape() {
        let t = tree(leaf(2.0, 2), TaskKind::Regression, 1);
        let d = Dataset {
            schema: vec![],
            rows: vec![vec![0.0], vec![1.0]],
            targets: vec![1.0, 3.0],
            task: TaskKind::Regression,
        };
        let acc = eval_accuracy(&PredictiveModel::Tree(t), &d).unwrap();
        assert_eq!(acc.mae, Some(1.0));
        // |2-1|/1 = 1, |2-3|/3 = 1/3 -> mean 2/3
        assert!((acc.mape.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_mape_of_single_prediction() {
        let t = tree(leaf(2.0, 1), TaskKind::Regression, 1);
        let d = Dataset {
            schema: vec![],
            rows: vec![vec![0.0]],
            targets: vec![1.0],
            task: TaskKind::Regression,
        };
        let acc = eval_accuracy(&PredictiveModel::Tree(t), &d).unwrap();
        assert_eq!(acc.mape, Some(1.0));
    }

    #[test]
    fn accuracy_task_mismatch() {
        let t = tree(leaf(2.0, 1), TaskKind::Regression, 1);
        let d = Dataset {
            schema: vec![],
            rows: vec![vec![0.0]],
            targets: vec![1.0],
            task: TaskKind::Classification,
        };
        assert!(matches!(
            eval_accuracy(&PredictiveModel::Tree(t), &d),
            Err(ModelError::TaskMismatch)
        ));
    }

    #[test]
    fn model_json_round_trip_preserves_predictions() {
        let t = tree(
            split(0, 1.25, split(1, -0.5, leaf(0.125, 2), leaf(0.875, 3)), leaf(0.5, 5)),
            TaskKind::Classification,
            2,
        );
        let model = PredictiveModel::Tree(t);
        let back = PredictiveModel::from_json(&model.to_json()).unwrap();
        for x in [
            Instance(vec![0.3, -1.7]),
            Instance(vec![0.3, 0.1]),
            Instance(vec![5.0, 0.0]),
        ] {
            assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
        }
    }
}
