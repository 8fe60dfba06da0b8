//! Local feature-attribution explainers: a perturbation-sampling surrogate
//! with weighted ridge regression, an exact cover-conditioned tree-Shapley
//! explainer, and a brute-force subset-enumeration Shapley oracle used to
//! validate it.

mod brute_force;
mod surrogate;
mod tree_shapley;

pub use brute_force::brute_force_shapley;
pub use surrogate::explain_surrogate;
pub use tree_shapley::explain_tree_shapley;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{FeatureIntervalMap, ModelError, PredictiveModel};
use crate::seeding::derive_seed;
use crate::tabular::{Dataset, Instance};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model carries no usable cover statistics")]
    MissingCover,
    #[error("{n} features exceeds the brute-force limit of {max}")]
    TooManyFeatures { n: usize, max: usize },
    #[error("cannot average an empty explanation sequence")]
    EmptyExplanationSet,
    #[error("explanation widths differ: {a} vs {b}")]
    ExplanationWidthMismatch { a: usize, b: usize },
    #[error("explainer config invalid: {0}")]
    InvalidConfig(String),
}

/// A local explanation: one signed weight per feature, optionally the value
/// range each feature was considered relevant over, the model output the
/// weights attribute, and the Shapley baseline when the explainer has one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Explanation {
    pub weights: Vec<f64>,
    pub intervals: Option<FeatureIntervalMap>,
    pub explained_output: f64,
    pub base_value: Option<f64>,
}

impl Explanation {
    pub fn num_features(&self) -> usize {
        self.weights.len()
    }

    /// Feature indices with a nonzero weight.
    pub fn nonzero_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, _)| i)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("explanation serialization cannot fail")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplainerKind {
    Surrogate,
    TreeShapley,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplainerConfig {
    pub kind: ExplainerKind,
    /// Explanations generated and averaged per instance.
    pub k_repeats: usize,
    pub surrogate_samples: usize,
    /// Defaults to `0.75 * sqrt(num_features)` when absent.
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
}

impl ExplainerConfig {
    pub fn new(kind: ExplainerKind) -> ExplainerConfig {
        ExplainerConfig {
            kind,
            k_repeats: 10,
            surrogate_samples: 1000,
            kernel_width: None,
            ridge_lambda: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ExplainError> {
        if self.k_repeats < 1 {
            return Err(ExplainError::InvalidConfig("k_repeats must be >= 1".into()));
        }
        if self.surrogate_samples < 10 {
            return Err(ExplainError::InvalidConfig(
                "surrogate_samples must be >= 10".into(),
            ));
        }
        Ok(())
    }
}

/// Produce a single explanation with the configured explainer.
pub fn explain_one(
    model: &PredictiveModel,
    train: &Dataset,
    cfg: &ExplainerConfig,
    x: &Instance,
    seed: u64,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    match cfg.kind {
        ExplainerKind::Surrogate => explain_surrogate(model, x, train, cfg, seed),
        ExplainerKind::TreeShapley => explain_tree_shapley(model, x),
    }
}

/// Generate `k_repeats` explanations under derived seeds and average them.
/// The tree-Shapley explainer is deterministic, so a single run suffices.
pub fn explain_averaged(
    model: &PredictiveModel,
    train: &Dataset,
    cfg: &ExplainerConfig,
    x: &Instance,
    seed: u64,
) -> Result<Explanation, ExplainError> {
    cfg.validate()?;
    if cfg.kind == ExplainerKind::TreeShapley {
        return explain_tree_shapley(model, x);
    }
    let runs: Vec<Explanation> = (0..cfg.k_repeats)
        .map(|rep| explain_one(model, train, cfg, x, derive_seed(seed, &[rep as u64])))
        .collect::<Result<_, _>>()?;
    average_explanations(&runs)
}

/// Per-feature arithmetic mean of signed weights. Intervals come from the
/// first explanation that carries them; the explained output is averaged.
pub fn average_explanations(es: &[Explanation]) -> Result<Explanation, ExplainError> {
    let first = es.first().ok_or(ExplainError::EmptyExplanationSet)?;
    let width = first.num_features();
    for e in es {
        if e.num_features() != width {
            return Err(ExplainError::ExplanationWidthMismatch {
                a: width,
                b: e.num_features(),
            });
        }
    }
    let k = es.len() as f64;
    let mut weights = vec![0.0; width];
    for e in es {
        for (acc, w) in weights.iter_mut().zip(&e.weights) {
            *acc += w / k;
        }
    }
    let explained_output = es.iter().map(|e| e.explained_output).sum::<f64>() / k;
    let base_value = es
        .iter()
        .all(|e| e.base_value.is_some())
        .then(|| es.iter().map(|e| e.base_value.unwrap()).sum::<f64>() / k);
    let intervals = es.iter().find_map(|e| e.intervals.clone());
    Ok(Explanation {
        weights,
        intervals,
        explained_output,
        base_value,
    })
}
