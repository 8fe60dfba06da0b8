//! Phase 2: white-box-guided parameter search. Two parameters of the
//! perturbation method are tuned against the decision tree: the cumulative
//! decile range of absolute feature weights that maximises agreement F1
//! with the path features, and the weight-bin size whose recovered value
//! intervals sit closest to the tree's path intervals.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explainers::{
    explain_averaged, explain_tree_shapley, ExplainError, ExplainerConfig, ExplainerKind,
    Explanation,
};
use crate::models::{DecisionTree, FeatureIntervalMap, Interval, PredictiveModel};
use crate::phase1::{self, PhaseError, Phase1Report};
use crate::phase3::{self, Phase3Params, Phase3Report};
use crate::seeding::derive_seed;
use crate::stats;
use crate::tabular::{Dataset, FeatureSchema, Instance};

/// Bin sizes tried by [`bin_size_search`] unless the caller overrides them.
pub const DEFAULT_CANDIDATE_PS: [f64; 6] = [0.05, 0.10, 0.15, 0.20, 0.25, 0.30];

const ZERO_WEIGHT_EPS: f64 = 1e-12;

/// Nine cumulative feature sets: `set_d` holds the features whose absolute
/// weight reaches the `(100 - 10 d)`-th percentile of the nonzero
/// absolute-weight distribution, so `set_1 ⊆ set_2 ⊆ … ⊆ set_9`.
/// None when every weight is zero.
pub fn decile_feature_sets(e: &Explanation) -> Option<[BTreeSet<usize>; 9]> {
    let nonzero: Vec<f64> = e
        .weights
        .iter()
        .filter(|w| **w != 0.0)
        .map(|w| w.abs())
        .collect();
    if nonzero.is_empty() {
        return None;
    }
    let mut sorted = nonzero;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut sets: [BTreeSet<usize>; 9] = Default::default();
    for d in 1..=9usize {
        let threshold = stats::percentile_sorted(&sorted, (100 - 10 * d) as f64);
        sets[d - 1] = e
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0 && w.abs() >= threshold)
            .map(|(i, _)| i)
            .collect();
    }
    Some(sets)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecileSearchResult {
    /// Mean F1 against the true path features for each decile range 1..=9.
    pub per_d_scores: BTreeMap<u8, f64>,
    pub optimal_d: u8,
    pub instances_used: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl DecileSearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("d,mean_f1\n");
        for (d, f1) in &self.per_d_scores {
            out.push_str(&format!("{d},{f1}\n"));
        }
        out
    }
}

fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Find the decile range whose feature set best agrees with the tree's path
/// features, by mean F1 over the evaluation set (ties to the smallest d).
pub fn decile_search(
    tree: &DecisionTree,
    cfg: &ExplainerConfig,
    train: &Dataset,
    eval: &Dataset,
    seed: u64,
) -> Result<DecileSearchResult, PhaseError> {
    if eval.num_rows() == 0 {
        return Err(PhaseError::EmptyEvalSet);
    }
    let model = PredictiveModel::Tree(tree.clone());

    let per_instance: Vec<Result<Option<[f64; 9]>, PhaseError>> = (0..eval.num_rows())
        .into_par_iter()
        .map(|id| {
            let x = eval.instance(id);
            let true_f = tree.true_features(&x)?;
            if true_f.is_empty() {
                return Ok(None);
            }
            let e = explain_averaged(&model, train, cfg, &x, derive_seed(seed, &[id as u64]))?;
            let Some(sets) = decile_feature_sets(&e) else {
                return Ok(None);
            };
            let mut scores = [0.0f64; 9];
            for (d, set_d) in sets.iter().enumerate() {
                let hits = true_f.intersection(set_d).count() as f64;
                let recall = hits / true_f.len() as f64;
                let precision = if set_d.is_empty() {
                    0.0
                } else {
                    hits / set_d.len() as f64
                };
                scores[d] = f1_score(precision, recall);
            }
            Ok(Some(scores))
        })
        .collect();

    let mut sums = [0.0f64; 9];
    let mut used = 0usize;
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for r in per_instance {
        match r? {
            Some(scores) => {
                for (acc, s) in sums.iter_mut().zip(scores) {
                    *acc += s;
                }
                used += 1;
            }
            None => {
                *skipped
                    .entry(phase1::SKIP_EMPTY_TRUE_FEATURES.into())
                    .or_insert(0) += 1;
            }
        }
    }
    if used == 0 {
        return Err(PhaseError::NoUsableInstances(
            "every instance lacked path features or explanation weights".into(),
        ));
    }

    let per_d_scores: BTreeMap<u8, f64> = (1..=9u8)
        .map(|d| (d, sums[d as usize - 1] / used as f64))
        .collect();
    let optimal_d = (1..=9u8)
        .max_by(|a, b| {
            per_d_scores[a]
                .partial_cmp(&per_d_scores[b])
                .unwrap()
                .then(b.cmp(a)) // strict improvement only: ties keep smaller d
        })
        .unwrap();
    Ok(DecileSearchResult {
        per_d_scores,
        optimal_d,
        instances_used: used,
        skipped,
    })
}

/// Evenly spaced candidate values across the observed range, plus the
/// instance's own value.
fn grid_candidates(schema: &FeatureSchema, x_value: f64, points: usize) -> Vec<f64> {
    let (lo, hi) = (schema.observed_min, schema.observed_max);
    if hi <= lo || points < 2 {
        return vec![x_value];
    }
    let step = (hi - lo) / (points - 1) as f64;
    let mut candidates: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    candidates.push(x_value);
    candidates
}

/// Re-explain the instance at every candidate value of feature `f` and read
/// that feature's weight back.
fn weight_curve<F>(
    x: &Instance,
    f: usize,
    candidates: &[f64],
    explain: F,
) -> Result<Vec<(f64, f64)>, ExplainError>
where
    F: Fn(&Instance) -> Result<Explanation, ExplainError>,
{
    candidates
        .iter()
        .map(|&v| Ok((v, explain(&x.with_value(f, v))?.weights[f])))
        .collect()
}

fn interval_from_curve(
    curve: &[(f64, f64)],
    w_original: f64,
    p: f64,
    x_value: f64,
    schema: &FeatureSchema,
) -> Interval {
    if w_original.abs() <= ZERO_WEIGHT_EPS {
        // No reference weight to band around: the whole observed range.
        return Interval::new(schema.observed_min, schema.observed_max);
    }
    let band = p * w_original.abs();
    let mut lo = x_value;
    let mut hi = x_value;
    for &(v, w) in curve {
        if (w - w_original).abs() <= band {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    Interval::new(lo, hi)
}

/// The range of feature values whose re-explained weight stays within
/// `p * |w|` of the instance's weight: candidates are a grid over the
/// observed range plus the instance's value, and the interval spans the
/// qualifying minimum to maximum.
pub fn weight_bin_interval<F>(
    e: &Explanation,
    x: &Instance,
    f: usize,
    p: f64,
    schema: &FeatureSchema,
    grid_points: usize,
    explain: F,
) -> Result<Interval, ExplainError>
where
    F: Fn(&Instance) -> Result<Explanation, ExplainError>,
{
    let w_original = e.weights[f];
    if w_original.abs() <= ZERO_WEIGHT_EPS {
        return Ok(Interval::new(schema.observed_min, schema.observed_max));
    }
    let candidates = grid_candidates(schema, x[f], grid_points);
    let curve = weight_curve(x, f, &candidates, explain)?;
    Ok(interval_from_curve(&curve, w_original, p, x[f], schema))
}

/// Mean normalized distance between two interval maps over their shared
/// features: infinite bounds clamp to the observed range, each bound
/// difference is normalized by twice the observed range. None when no
/// shared feature has a positive range.
pub fn threshold_distance(
    expl_iv: &FeatureIntervalMap,
    tree_iv: &FeatureIntervalMap,
    schema: &[FeatureSchema],
) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (f, e) in expl_iv {
        let Some(t) = tree_iv.get(f) else { continue };
        let range = schema[*f].observed_range();
        if range <= 0.0 {
            continue;
        }
        let clamp = |iv: &Interval| {
            let lo = if iv.lo.is_finite() {
                iv.lo
            } else {
                schema[*f].observed_min
            };
            let hi = if iv.hi.is_finite() {
                iv.hi
            } else {
                schema[*f].observed_max
            };
            (lo, hi)
        };
        let (lo_e, hi_e) = clamp(e);
        let (lo_t, hi_t) = clamp(t);
        total += ((lo_e - lo_t).abs() + (hi_e - hi_t).abs()) / (2.0 * range);
        count += 1;
    }
    (count > 0).then(|| total / count as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinSearchResult {
    /// (bin size, mean normalized threshold distance), in candidate order.
    pub per_p_distances: Vec<(f64, f64)>,
    pub optimal_p: f64,
    pub instances_used: usize,
    pub skipped: BTreeMap<String, usize>,
}

impl BinSearchResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn curve_csv(&self) -> String {
        let mut out = String::from("p,mean_distance\n");
        for (p, d) in &self.per_p_distances {
            out.push_str(&format!("{p},{d}\n"));
        }
        out
    }
}

/// Find the weight-bin size whose explanation-derived intervals sit closest
/// to the tree's path intervals, by mean normalized threshold distance over
/// the true features of each instance (ties to the smallest p).
///
/// Only the weight-only explainer applies here: the surrogate carries its
/// own intervals and has no bin size to tune.
pub fn bin_size_search(
    tree: &DecisionTree,
    cfg: &ExplainerConfig,
    train: &Dataset,
    eval: &Dataset,
    candidate_ps: &[f64],
    grid_points: usize,
    seed: u64,
) -> Result<BinSearchResult, PhaseError> {
    if cfg.kind != ExplainerKind::TreeShapley {
        return Err(PhaseError::InvalidParameter(
            "bin_size_search applies to the weight-only (tree_shapley) explainer".into(),
        ));
    }
    if eval.num_rows() == 0 {
        return Err(PhaseError::EmptyEvalSet);
    }
    if candidate_ps.is_empty() || candidate_ps.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(PhaseError::InvalidParameter(
            "candidate bin sizes must lie in (0, 1)".into(),
        ));
    }
    let model = PredictiveModel::Tree(tree.clone());
    let schema = &train.schema;

    let per_instance: Vec<Result<Option<Vec<f64>>, PhaseError>> = (0..eval.num_rows())
        .into_par_iter()
        .map(|id| {
            let x = eval.instance(id);
            let true_f = tree.true_features(&x)?;
            if true_f.is_empty() {
                return Ok(None);
            }
            let e = explain_averaged(&model, train, cfg, &x, derive_seed(seed, &[id as u64]))?;
            let tree_iv = tree.path_intervals(&x)?;

            // One weight curve per feature is shared across all bin sizes.
            let mut curves: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for &f in &true_f {
                let candidates = grid_candidates(&schema[f], x[f], grid_points);
                let curve = weight_curve(&x, f, &candidates, |xi| {
                    explain_tree_shapley(&model, xi)
                })?;
                curves.insert(f, curve);
            }

            let mut distances = Vec::with_capacity(candidate_ps.len());
            for &p in candidate_ps {
                let mut expl_iv = FeatureIntervalMap::new();
                for &f in &true_f {
                    expl_iv.insert(
                        f,
                        interval_from_curve(&curves[&f], e.weights[f], p, x[f], &schema[f]),
                    );
                }
                match threshold_distance(&expl_iv, &tree_iv, schema) {
                    Some(d) => distances.push(d),
                    None => return Ok(None),
                }
            }
            Ok(Some(distances))
        })
        .collect();

    let mut sums = vec![0.0f64; candidate_ps.len()];
    let mut used = 0usize;
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    for r in per_instance {
        match r? {
            Some(distances) => {
                for (acc, d) in sums.iter_mut().zip(distances) {
                    *acc += d;
                }
                used += 1;
            }
            None => {
                *skipped
                    .entry(phase1::SKIP_EMPTY_TRUE_FEATURES.into())
                    .or_insert(0) += 1;
            }
        }
    }
    if used == 0 {
        return Err(PhaseError::NoUsableInstances(
            "every instance lacked path features".into(),
        ));
    }

    let per_p_distances: Vec<(f64, f64)> = candidate_ps
        .iter()
        .zip(&sums)
        .map(|(&p, &s)| (p, s / used as f64))
        .collect();
    let optimal_p = per_p_distances
        .iter()
        .fold(None::<(f64, f64)>, |best, &(p, d)| match best {
            Some((_, bd)) if bd <= d => best, // strict improvement only
            _ => Some((p, d)),
        })
        .map(|(p, _)| p)
        .unwrap();
    Ok(BinSearchResult {
        per_p_distances,
        optimal_p,
        instances_used: used,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationRow {
    pub instance_id: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub supporting: Option<f64>,
    pub contrary: Option<f64>,
}

/// Side-by-side comparison of the perturbation metrics (run against the
/// white box with the chosen parameters) and the Phase 1 agreement metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase2ValidationReport {
    pub combined: Vec<ValidationRow>,
    pub phase1: Phase1Report,
    pub phase3: Phase3Report,
}

impl Phase2ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,recall,precision,supporting,contrary\n");
        for r in &self.combined {
            let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.instance_id,
                fmt(r.recall),
                fmt(r.precision),
                fmt(r.supporting),
                fmt(r.contrary)
            ));
        }
        out
    }
}

/// Apply the Phase 3 procedure to the white box itself with the parameters
/// chosen by the searches, alongside the Phase 1 metrics for the same
/// instances.
#[allow(clippy::too_many_arguments)]
pub fn validate_phase2(
    tree: &DecisionTree,
    cfg: &ExplainerConfig,
    train: &Dataset,
    eval: &Dataset,
    optimal_d: u8,
    optimal_p: f64,
    params: &Phase3Params,
    seed: u64,
) -> Result<Phase2ValidationReport, PhaseError> {
    let phase1 = phase1::run_phase1(tree, cfg, train, eval, seed)?;
    let model = PredictiveModel::Tree(tree.clone());
    let p3_params = Phase3Params {
        optimal_d,
        optimal_p,
        ..params.clone()
    };
    let phase3 = phase3::run_phase3(&model, cfg, train, eval, &p3_params, seed)?;
    let combined = phase1
        .records
        .iter()
        .zip(&phase3.records)
        .map(|(p1, p3)| ValidationRow {
            instance_id: p1.instance_id,
            recall: p1.recall,
            precision: p1.precision,
            supporting: p3.supporting,
            contrary: p3.contrary,
        })
        .collect();
    Ok(Phase2ValidationReport {
        combined,
        phase1,
        phase3,
    })
}
