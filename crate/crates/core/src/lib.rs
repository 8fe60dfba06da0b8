//! Fidelity evaluation of local feature-attribution explanations against
//! tree-based predictive models on tabular data.
//!
//! The toolkit is organized around a three-phase evaluation:
//!
//! 1. [`phase1`] — white-box agreement: recall and precision of the features
//!    an explanation marks relevant against the features on a decision
//!    tree's decision path.
//! 2. [`phase2`] — white-box-guided parameter search: the cumulative decile
//!    range of absolute feature weights that maximises agreement F1, and the
//!    weight-bin size that recovers value intervals closest to the tree's
//!    path intervals.
//! 3. [`phase3`] — black-box perturbation fidelity: model output change under
//!    perturbations inside (explanation-supporting) and just outside
//!    (explanation-contrary) the value ranges the explanation marks relevant.
//!
//! Supporting modules: [`tabular`] for dataset ingestion, [`models`] for the
//! white-box decision tree and black-box gradient-boosted ensemble, and
//! [`explainers`] for the perturbation surrogate and tree-Shapley explainers.

pub mod explainers;
pub mod models;
pub mod phase1;
pub mod phase2;
pub mod phase3;
pub mod seeding;
pub mod stats;
pub mod tabular;

pub use explainers::{Explanation, ExplainerConfig, ExplainerKind};
pub use models::{DecisionTree, FeatureIntervalMap, Interval, PredictiveModel, TreeEnsemble};
pub use tabular::{Dataset, FeatureKind, FeatureSchema, Instance, TaskKind};
