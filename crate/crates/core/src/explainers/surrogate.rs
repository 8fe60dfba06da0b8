//! Perturbation-sampling surrogate explainer.
//!
//! Numeric features are discretized into the training quartile bins; samples
//! either stay in the explained instance's bin or take a random training
//! value, and a locally weighted ridge regression over the resulting binary
//! indicators yields the feature weights. Because the bins come from
//! training quartiles, the relevant value ranges reported alongside the
//! weights are seed-independent.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::models::{FeatureIntervalMap, Interval, PredictiveModel};
use crate::tabular::{Dataset, FeatureKind, FeatureSchema, Instance, TaskKind};

use super::{ExplainError, ExplainerConfig, Explanation};

/// Quartile bin index of `v`: 0..=3 over (q25, q50, q75).
fn quartile_bin(schema: &FeatureSchema, v: f64) -> usize {
    let q = &schema.quartile_bounds;
    if v <= q[0] {
        0
    } else if v <= q[1] {
        1
    } else if v <= q[2] {
        2
    } else {
        3
    }
}

/// Value range of the bin containing `x_value`, widened if the value sits
/// outside the observed training range.
pub(crate) fn quartile_bin_interval(schema: &FeatureSchema, x_value: f64) -> Interval {
    let q = &schema.quartile_bounds;
    let (lo, hi) = match quartile_bin(schema, x_value) {
        0 => (schema.observed_min, q[0]),
        1 => (q[0], q[1]),
        2 => (q[1], q[2]),
        _ => (q[2], schema.observed_max),
    };
    Interval::new(lo.min(x_value), hi.max(x_value))
}

fn is_degenerate(schema: &FeatureSchema) -> bool {
    schema.observed_min == schema.observed_max
}

/// Relevant value ranges carried with a surrogate explanation.
pub(crate) fn surrogate_intervals(train: &Dataset, x: &Instance) -> FeatureIntervalMap {
    let mut map = FeatureIntervalMap::new();
    for (f, schema) in train.schema.iter().enumerate() {
        let iv = if is_degenerate(schema) {
            Interval::new(schema.observed_min, schema.observed_max)
        } else if schema.kind == FeatureKind::BinaryIndicator {
            Interval::point(x[f])
        } else {
            quartile_bin_interval(schema, x[f])
        };
        map.insert(f, iv);
    }
    map
}

/// Explain one instance by fitting a weighted ridge regression of the model
/// output on binary same-bin-as-x indicators over perturbed samples.
pub fn explain_surrogate(
    model: &PredictiveModel,
    x: &Instance,
    train: &Dataset,
    cfg: &ExplainerConfig,
    seed: u64,
) -> Result<Explanation, ExplainError> {
    let num_features = model.num_features();
    let p_original = model.predict(x)?;
    let original_class_is_one = p_original >= 0.5;
    let output_for = |p: f64| match model.task() {
        TaskKind::Regression => p,
        TaskKind::Classification => {
            if original_class_is_one {
                p
            } else {
                1.0 - p
            }
        }
    };
    let explained_output = output_for(p_original);

    // Degenerate (zero-variance) features carry no signal; they are pinned
    // to weight zero and excluded from the regression.
    let active: Vec<usize> = (0..num_features)
        .filter(|&f| !is_degenerate(&train.schema[f]))
        .collect();

    let kernel_width = cfg
        .kernel_width
        .unwrap_or_else(|| 0.75 * (num_features as f64).sqrt());

    let mut rng = StdRng::seed_from_u64(seed);
    let dim = active.len() + 1; // intercept first
    let mut xtwx = vec![vec![0.0f64; dim]; dim];
    let mut xtwy = vec![0.0f64; dim];

    let mut perturbed = x.clone();
    let mut bits = vec![1.0f64; dim]; // bits[0] is the intercept column
    for _ in 0..cfg.surrogate_samples {
        let mut zero_bits = 0usize;
        for (slot, &f) in active.iter().enumerate() {
            let schema = &train.schema[f];
            let keep_bin = rng.gen_bool(0.5);
            let value = if keep_bin {
                match schema.kind {
                    FeatureKind::BinaryIndicator => x[f],
                    FeatureKind::Numeric => {
                        let iv = quartile_bin_interval(schema, x[f]);
                        rng.gen_range(iv.lo..=iv.hi)
                    }
                }
            } else {
                let row = rng.gen_range(0..train.num_rows());
                train.rows[row][f]
            };
            let in_bin = match schema.kind {
                FeatureKind::BinaryIndicator => value == x[f],
                FeatureKind::Numeric => quartile_bin(schema, value) == quartile_bin(schema, x[f]),
            };
            perturbed.0[f] = value;
            bits[slot + 1] = if in_bin { 1.0 } else { 0.0 };
            zero_bits += usize::from(!in_bin);
        }

        let y = output_for(model.predict(&perturbed)?);
        // Locality weight from distance to the all-ones vector in bit space.
        let d_sq = zero_bits as f64;
        let w = (-d_sq / (kernel_width * kernel_width)).exp();

        for a in 0..dim {
            if bits[a] == 0.0 {
                continue;
            }
            let wa = w * bits[a];
            for b in a..dim {
                xtwx[a][b] += wa * bits[b];
            }
            xtwy[a] += wa * y;
        }
    }
    for a in 0..dim {
        for b in 0..a {
            xtwx[a][b] = xtwx[b][a];
        }
    }
    // Ridge penalty on every coefficient except the intercept.
    for (a, row) in xtwx.iter_mut().enumerate().skip(1) {
        row[a] += cfg.ridge_lambda;
    }

    let beta = solve_linear(xtwx, xtwy).ok_or_else(|| {
        ExplainError::InvalidConfig("singular ridge system; increase ridge_lambda".into())
    })?;

    let mut weights = vec![0.0; num_features];
    for (slot, &f) in active.iter().enumerate() {
        weights[f] = beta[slot + 1];
    }

    Ok(Explanation {
        weights,
        intervals: Some(surrogate_intervals(train, x)),
        explained_output,
        base_value: None,
    })
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for col in row + 1..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DecisionTree, TreeNode};
    use crate::tabular::TaskKind;

    fn stump_model(feature: usize, threshold: f64, num_features: usize) -> PredictiveModel {
        let root = TreeNode::Split {
            feature_index: feature,
            threshold,
            cover: 10,
            left: Box::new(TreeNode::Leaf {
                value: 0.1,
                cover: 5,
            }),
            right: Box::new(TreeNode::Leaf {
                value: 0.9,
                cover: 5,
            }),
        };
        PredictiveModel::Tree(DecisionTree {
            root,
            task: TaskKind::Classification,
            num_features,
            max_depth_observed: 1,
        })
    }

    fn uniform_train(num_features: usize, n: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..num_features)
                    .map(|f| ((i * 7 + f * 13) % n) as f64 / (n - 1) as f64 * 10.0)
                    .collect()
            })
            .collect();
        let targets = vec![0.0; n];
        Dataset::from_rows(
            (0..num_features).map(|f| format!("f{f}")).collect(),
            rows,
            targets,
            TaskKind::Classification,
        )
    }

    #[test]
    fn constant_model_gives_zero_weights() {
        let model = PredictiveModel::Tree(DecisionTree {
            root: TreeNode::Leaf {
                value: 0.7,
                cover: 10,
            },
            task: TaskKind::Classification,
            num_features: 3,
            max_depth_observed: 0,
        });
        let train = uniform_train(3, 50);
        let cfg = ExplainerConfig::new(super::super::ExplainerKind::Surrogate);
        let x = Instance(vec![1.0, 2.0, 3.0]);
        let e = explain_surrogate(&model, &x, &train, &cfg, 1).unwrap();
        assert!(e.weights.iter().all(|w| w.abs() < 1e-6), "{:?}", e.weights);
    }

    #[test]
    fn stump_feature_dominates() {
        let model = stump_model(0, 5.0, 4);
        let train = uniform_train(4, 100);
        let cfg = ExplainerConfig::new(super::super::ExplainerKind::Surrogate);
        let x = Instance(vec![1.0, 5.0, 5.0, 5.0]);
        let mut hits = 0;
        for seed in 0..100 {
            let e = explain_surrogate(&model, &x, &train, &cfg, seed).unwrap();
            let argmax = (0..4)
                .max_by(|&a, &b| e.weights[a].abs().partial_cmp(&e.weights[b].abs()).unwrap())
                .unwrap();
            hits += usize::from(argmax == 0);
        }
        assert!(hits >= 95, "stump feature won only {hits}/100 runs");
    }

    #[test]
    fn quartile_bin_interval_example() {
        let schema = FeatureSchema {
            name: "f".into(),
            kind: FeatureKind::Numeric,
            observed_min: 0.0,
            observed_max: 12.0,
            observed_std: 1.0,
            quartile_bounds: [2.0, 5.0, 9.0],
            source_categorical: None,
        };
        let iv = quartile_bin_interval(&schema, 6.0);
        assert_eq!((iv.lo, iv.hi), (5.0, 9.0));
        let iv = quartile_bin_interval(&schema, 1.0);
        assert_eq!((iv.lo, iv.hi), (0.0, 2.0));
        let iv = quartile_bin_interval(&schema, 20.0);
        assert_eq!((iv.lo, iv.hi), (9.0, 20.0));
    }

    #[test]
    fn deterministic_under_seed() {
        let model = stump_model(1, 5.0, 3);
        let train = uniform_train(3, 40);
        let cfg = ExplainerConfig::new(super::super::ExplainerKind::Surrogate);
        let x = Instance(vec![2.0, 8.0, 4.0]);
        let a = explain_surrogate(&model, &x, &train, &cfg, 77).unwrap();
        let b = explain_surrogate(&model, &x, &train, &cfg, 77).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.explained_output, b.explained_output);
    }

    #[test]
    fn intervals_present_and_contain_instance() {
        let model = stump_model(0, 5.0, 3);
        let train = uniform_train(3, 40);
        let cfg = ExplainerConfig::new(super::super::ExplainerKind::Surrogate);
        let x = Instance(vec![2.0, 8.0, 4.0]);
        let e = explain_surrogate(&model, &x, &train, &cfg, 7).unwrap();
        let intervals = e.intervals.unwrap();
        for f in 0..3 {
            assert!(intervals[&f].contains(x[f]), "feature {f}");
        }
    }

    #[test]
    fn degenerate_feature_pinned_to_zero() {
        let model = stump_model(0, 5.0, 2);
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 3.0, 4.0]).collect();
        let train = Dataset::from_rows(
            vec!["a".into(), "b".into()],
            rows,
            vec![0.0; 30],
            TaskKind::Classification,
        );
        let cfg = ExplainerConfig::new(super::super::ExplainerKind::Surrogate);
        let e = explain_surrogate(&model, &Instance(vec![1.0, 4.0]), &train, &cfg, 3).unwrap();
        assert_eq!(e.weights[1], 0.0);
        assert_eq!(e.intervals.unwrap()[&1], Interval::new(4.0, 4.0));
    }

    #[test]
    fn averaging_reduces_seed_variance() {
        let model = stump_model(0, 5.0, 3);
        let train = uniform_train(3, 60);
        let cfg = ExplainerConfig {
            surrogate_samples: 200,
            ..ExplainerConfig::new(super::super::ExplainerKind::Surrogate)
        };
        let x = Instance(vec![1.0, 5.0, 5.0]);
        let single: Vec<f64> = (0..30u64)
            .map(|s| explain_surrogate(&model, &x, &train, &cfg, s).unwrap().weights[0])
            .collect();
        let averaged: Vec<f64> = (0..30u64)
            .map(|batch| {
                let runs: Vec<_> = (0..10u64)
                    .map(|r| {
                        explain_surrogate(&model, &x, &train, &cfg, batch * 1000 + r).unwrap()
                    })
                    .collect();
                crate::explainers::average_explanations(&runs).unwrap().weights[0]
            })
            .collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
        };
        assert!(
            var(&averaged) < var(&single),
            "averaging did not stabilize: {} vs {}",
            var(&averaged),
            var(&single)
        );
    }

    #[test]
    fn solver_round_trips() {
        let a = vec![
            vec![4.0, 1.0, 0.0],
            vec![1.0, 3.0, 1.0],
            vec![0.0, 1.0, 2.0],
        ];
        let x_true = [1.0, -2.0, 3.0];
        let b: Vec<f64> = a
            .iter()
            .map(|row| row.iter().zip(x_true.iter()).map(|(r, x)| r * x).sum())
            .collect();
        let x = solve_linear(a, b).unwrap();
        for (got, want) in x.iter().zip(x_true.iter()) {
            assert!((got - want).abs() < 1e-9);
        }
    }
}
