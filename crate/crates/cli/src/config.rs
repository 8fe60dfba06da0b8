//! Run configuration: a single JSON document, with command-line flags
//! overriding individual keys.

use serde::{Deserialize, Serialize};

use fidelity_core::explainers::{ExplainerConfig, ExplainerKind};
use fidelity_core::models::{CartParams, GbtParams};
use fidelity_core::phase2::DEFAULT_CANDIDATE_PS;
use fidelity_core::tabular::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tree,
    Ensemble,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: String,
    pub target_column: String,
    pub task: TaskKind,
    #[serde(default)]
    pub balance: bool,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_split() -> f64 {
    0.7
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub num_trees: usize,
    pub learning_rate: f64,
}

impl Default for ModelSection {
    fn default() -> ModelSection {
        ModelSection {
            kind: ModelKind::Tree,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            num_trees: 100,
            learning_rate: 0.3,
        }
    }
}

impl ModelSection {
    pub fn cart_params(&self) -> CartParams {
        CartParams {
            max_depth: self.max_depth,
            min_samples_split: self.min_samples_split,
            min_samples_leaf: self.min_samples_leaf,
        }
    }

    pub fn gbt_params(&self) -> GbtParams {
        GbtParams {
            num_trees: self.num_trees,
            learning_rate: self.learning_rate,
            max_depth: self.max_depth.unwrap_or(6),
            min_samples_leaf: self.min_samples_leaf,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainerSection {
    pub kind: ExplainerKind,
    pub k_repeats: usize,
    pub surrogate_samples: usize,
    pub kernel_width: Option<f64>,
    pub ridge_lambda: f64,
}

impl Default for ExplainerSection {
    fn default() -> ExplainerSection {
        ExplainerSection {
            kind: ExplainerKind::TreeShapley,
            k_repeats: 10,
            surrogate_samples: 1000,
            kernel_width: None,
            ridge_lambda: 1.0,
        }
    }
}

impl ExplainerSection {
    pub fn to_core(&self) -> ExplainerConfig {
        ExplainerConfig {
            kind: self.kind,
            k_repeats: self.k_repeats,
            surrogate_samples: self.surrogate_samples,
            kernel_width: self.kernel_width,
            ridge_lambda: self.ridge_lambda,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase2Section {
    pub candidate_ps: Vec<f64>,
    pub grid_points: usize,
}

impl Default for Phase2Section {
    fn default() -> Phase2Section {
        Phase2Section {
            candidate_ps: DEFAULT_CANDIDATE_PS.to_vec(),
            grid_points: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase3Section {
    pub optimal_d: Option<u8>,
    pub optimal_p: Option<f64>,
    pub margin: f64,
    pub repeats: usize,
}

impl Default for Phase3Section {
    fn default() -> Phase3Section {
        Phase3Section {
            optimal_d: None,
            optimal_p: None,
            margin: 0.05,
            repeats: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub explainer: ExplainerSection,
    #[serde(default)]
    pub phase2: Phase2Section,
    #[serde(default)]
    pub phase3: Phase3Section,
    /// Seed for the evaluation phases (explanations, perturbations).
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Where artifacts land; the --out flag overrides it.
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Stem of the dataset file, used to label report rows.
    pub fn dataset_name(&self) -> String {
        std::path::Path::new(&self.dataset.path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.dataset.path.clone())
    }
}
