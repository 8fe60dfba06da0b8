//! Phase 1: white-box agreement evaluation. Per instance, the features on
//! the decision-tree path ("true features") are compared against the
//! features the explanation ranks most relevant: recall uses the top-n
//! features by absolute weight (n from the longest decision path), precision
//! uses the features in the top quartile of the nonzero absolute-weight
//! distribution.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explainers::{explain_averaged, ExplainError, ExplainerConfig, Explanation};
use crate::models::{DecisionTree, ModelError, PredictiveModel};
use crate::seeding::derive_seed;
use crate::stats;
use crate::tabular::Dataset;

#[derive(Debug, Error)]
pub enum PhaseError {
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("no instance produced a usable measurement: {0}")]
    NoUsableInstances(String),
    #[error("{0}")]
    InvalidParameter(String),
}

pub const SKIP_EMPTY_TRUE_FEATURES: &str = "empty_true_features";
pub const SKIP_EMPTY_EXPLANATION: &str = "empty_explanation_features";

/// Number of explanation features to sample when measuring recall: the
/// length of the longest decision path, capped at two-thirds of the feature
/// space (rounded up) when paths revisit enough features to exceed it.
pub fn recall_sample_size(tree: &DecisionTree) -> usize {
    let longest = tree.max_depth_observed;
    if longest > tree.num_features {
        (2 * tree.num_features).div_ceil(3)
    } else {
        longest
    }
}

/// The `n` features with the largest nonzero absolute weight; ties broken by
/// the lower feature index. Fewer than `n` nonzero weights returns them all.
pub fn top_n_features(e: &Explanation, n: usize) -> BTreeSet<usize> {
    let mut ranked: Vec<(usize, f64)> = e
        .weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0)
        .map(|(i, w)| (i, w.abs()))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.into_iter().take(n).map(|(i, _)| i).collect()
}

/// Features whose absolute weight reaches the 75th percentile of the nonzero
/// absolute-weight distribution. Zero weights are excluded from the
/// distribution; an all-zero explanation selects nothing.
pub fn top_quartile_features(e: &Explanation) -> BTreeSet<usize> {
    let nonzero: Vec<f64> = e
        .weights
        .iter()
        .filter(|w| **w != 0.0)
        .map(|w| w.abs())
        .collect();
    if nonzero.is_empty() {
        return BTreeSet::new();
    }
    let q75 = stats::percentile(&nonzero, 75.0);
    e.weights
        .iter()
        .enumerate()
        .filter(|(_, w)| **w != 0.0 && w.abs() >= q75)
        .map(|(i, _)| i)
        .collect()
}

/// Recall of the true features: |true ∩ explanation| / |true|.
/// Undefined (None) when the true set is empty.
pub fn feature_recall(true_f: &BTreeSet<usize>, expl_f: &BTreeSet<usize>) -> Option<f64> {
    if true_f.is_empty() {
        return None;
    }
    Some(true_f.intersection(expl_f).count() as f64 / true_f.len() as f64)
}

/// Precision of the explanation features: |true ∩ explanation| /
/// |explanation|. Undefined (None) when the explanation set is empty.
pub fn feature_precision(true_f: &BTreeSet<usize>, expl_f: &BTreeSet<usize>) -> Option<f64> {
    if expl_f.is_empty() {
        return None;
    }
    Some(true_f.intersection(expl_f).count() as f64 / expl_f.len() as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase1Record {
    pub instance_id: usize,
    /// None = skipped (reason counted in the report).
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub n_used: usize,
    pub true_feature_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase1Report {
    pub records: Vec<Phase1Record>,
    pub mean_recall: Option<f64>,
    pub mean_precision: Option<f64>,
    pub skipped: BTreeMap<String, usize>,
}

impl Phase1Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,recall,precision,n_used,true_feature_count\n");
        for r in &self.records {
            let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.instance_id,
                fmt(r.recall),
                fmt(r.precision),
                r.n_used,
                r.true_feature_count
            ));
        }
        out
    }
}

/// Evaluate every instance of `eval` against the white-box tree: k averaged
/// explanations per instance, recall on top-n features, precision on
/// top-quartile features, aggregated as means over non-skipped instances.
pub fn run_phase1(
    tree: &DecisionTree,
    cfg: &ExplainerConfig,
    train: &Dataset,
    eval: &Dataset,
    seed: u64,
) -> Result<Phase1Report, PhaseError> {
    if eval.num_rows() == 0 {
        return Err(PhaseError::EmptyEvalSet);
    }
    let model = PredictiveModel::Tree(tree.clone());
    let n_used = recall_sample_size(tree);

    let records: Vec<Result<Phase1Record, PhaseError>> = (0..eval.num_rows())
        .into_par_iter()
        .map(|id| {
            let x = eval.instance(id);
            let true_f = tree.true_features(&x)?;
            if true_f.is_empty() {
                return Ok(Phase1Record {
                    instance_id: id,
                    recall: None,
                    precision: None,
                    n_used,
                    true_feature_count: 0,
                });
            }
            let e = explain_averaged(&model, train, cfg, &x, derive_seed(seed, &[id as u64]))?;
            let recall = feature_recall(&true_f, &top_n_features(&e, n_used));
            let precision = feature_precision(&true_f, &top_quartile_features(&e));
            Ok(Phase1Record {
                instance_id: id,
                recall,
                precision,
                n_used,
                true_feature_count: true_f.len(),
            })
        })
        .collect();
    let records: Vec<Phase1Record> = records.into_iter().collect::<Result<_, _>>()?;

    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        if r.true_feature_count == 0 {
            *skipped.entry(SKIP_EMPTY_TRUE_FEATURES.into()).or_insert(0) += 1;
        } else if r.precision.is_none() {
            *skipped.entry(SKIP_EMPTY_EXPLANATION.into()).or_insert(0) += 1;
        }
    }
    let mean_of = |take: &dyn Fn(&Phase1Record) -> Option<f64>| {
        let vals: Vec<f64> = records.iter().filter_map(take).collect();
        (!vals.is_empty()).then(|| stats::mean(&vals))
    };
    Ok(Phase1Report {
        mean_recall: mean_of(&|r| r.recall),
        mean_precision: mean_of(&|r| r.precision),
        records,
        skipped,
    })
}
