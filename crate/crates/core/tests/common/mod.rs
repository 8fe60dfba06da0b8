//! Shared generators for integration tests: random trees, ensembles, and
//! instances, all deterministic under a seed.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use fidelity_core::models::{DecisionTree, PredictiveModel, TreeEnsemble, TreeNode};
use fidelity_core::tabular::{Instance, TaskKind};

pub fn max_splits(node: &TreeNode) -> usize {
    match node {
        TreeNode::Leaf { .. } => 0,
        TreeNode::Split { left, right, .. } => 1 + max_splits(left).max(max_splits(right)),
    }
}

fn random_node(rng: &mut StdRng, num_features: usize, depth: usize, cover: usize) -> TreeNode {
    if depth == 0 || cover < 2 || rng.gen_bool(0.25) {
        return TreeNode::Leaf {
            value: rng.gen_range(-1.0..1.0),
            cover,
        };
    }
    let left_cover = rng.gen_range(1..cover);
    let right_cover = cover - left_cover;
    TreeNode::Split {
        feature_index: rng.gen_range(0..num_features),
        threshold: rng.gen_range(-5.0..5.0),
        cover,
        left: Box::new(random_node(rng, num_features, depth - 1, left_cover)),
        right: Box::new(random_node(rng, num_features, depth - 1, right_cover)),
    }
}

pub fn random_tree(seed: u64, num_features: usize, max_depth: usize) -> DecisionTree {
    let mut rng = StdRng::seed_from_u64(seed);
    let cover = rng.gen_range(20..200);
    let root = random_node(&mut rng, num_features, max_depth, cover);
    DecisionTree {
        max_depth_observed: max_splits(&root),
        root,
        task: TaskKind::Regression,
        num_features,
    }
}

pub fn random_ensemble(seed: u64, num_features: usize, num_trees: usize) -> TreeEnsemble {
    let mut rng = StdRng::seed_from_u64(seed);
    let trees = (0..num_trees)
        .map(|i| random_tree(seed ^ (i as u64 + 1).wrapping_mul(0x9e37), num_features, 4))
        .collect();
    TreeEnsemble {
        trees,
        learning_rate: rng.gen_range(0.05..0.5),
        base_score: rng.gen_range(-1.0..1.0),
        task: TaskKind::Regression,
    }
}

pub fn random_instance(seed: u64, num_features: usize) -> Instance {
    let mut rng = StdRng::seed_from_u64(seed);
    Instance((0..num_features).map(|_| rng.gen_range(-6.0..6.0)).collect())
}

pub fn random_model(seed: u64, num_features: usize) -> PredictiveModel {
    if seed % 2 == 0 {
        PredictiveModel::Tree(random_tree(seed, num_features, 5))
    } else {
        PredictiveModel::Ensemble(random_ensemble(seed, num_features, 1 + (seed as usize % 4)))
    }
}
