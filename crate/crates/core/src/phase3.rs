//! Phase 3: black-box perturbation fidelity. For each instance the features
//! in the top `optimal_d` deciles of absolute weight are perturbed to values
//! inside their explanation-relevant range (explanation-supporting) and to
//! values just outside it (explanation-contrary); fidelity is the mean
//! relative change of the model output over ten perturbed inputs per mode.

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::explainers::{
    explain_averaged, explain_tree_shapley, ExplainerConfig, Explanation,
};
use crate::models::{FeatureIntervalMap, Interval, PredictiveModel};
use crate::phase1::PhaseError;
use crate::phase2::{decile_feature_sets, weight_bin_interval};
use crate::seeding::derive_seed;
use crate::stats;
use crate::tabular::{Dataset, FeatureKind, FeatureSchema, Instance, TaskKind};

pub const EXCLUDE_ZERO_OUTPUT: &str = "zero_model_output";
pub const EXCLUDE_EMPTY_EXPLANATION: &str = "empty_explanation";
pub const EXCLUDE_NO_VIOLABLE: &str = "no_violable_bounds";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase3Params {
    /// Cumulative decile range selecting the features to perturb (1..=9).
    pub optimal_d: u8,
    /// Weight-bin size for interval recovery from weight-only explanations.
    pub optimal_p: f64,
    /// Perturbed inputs per instance per mode.
    pub perturbation_repeats: usize,
    /// Contrary perturbations land within this fraction of the observed
    /// feature range beyond the violated bound.
    pub contrary_margin: f64,
    /// Grid resolution for weight-bin interval recovery.
    pub grid_points: usize,
}

impl Phase3Params {
    pub fn new(optimal_d: u8, optimal_p: f64) -> Phase3Params {
        Phase3Params {
            optimal_d,
            optimal_p,
            perturbation_repeats: 10,
            contrary_margin: 0.05,
            grid_points: 100,
        }
    }
}

/// Value ranges the explanation considers relevant for `features`.
/// Explanations that carry intervals (the surrogate explainer) supply them
/// directly; weight-only explanations fall back to a weight-bin scan with
/// the phase-2 bin size. Binary indicators always take the degenerate
/// point interval at the instance's value.
pub fn relevant_intervals(
    e: &Explanation,
    features: &BTreeSet<usize>,
    optimal_p: f64,
    model: &PredictiveModel,
    x: &Instance,
    schema: &[FeatureSchema],
    grid_points: usize,
) -> Result<FeatureIntervalMap, PhaseError> {
    let mut map = FeatureIntervalMap::new();
    for &f in features {
        let iv = if schema[f].kind == FeatureKind::BinaryIndicator {
            Interval::point(x[f])
        } else if let Some(carried) = e.intervals.as_ref().and_then(|m| m.get(&f)) {
            *carried
        } else {
            weight_bin_interval(e, x, f, optimal_p, &schema[f], grid_points, |xi| {
                explain_tree_shapley(model, xi)
            })?
        };
        map.insert(f, iv);
    }
    Ok(map)
}

/// Replace every feature in `iv` with a uniform draw from its interval
/// clamped to the observed range. Features whose clamped interval is
/// degenerate (and binary indicators, whose interval is a point) keep their
/// value; the numeric degenerate ones are returned as kept.
pub fn perturb_supporting(
    x: &Instance,
    iv: &FeatureIntervalMap,
    schema: &[FeatureSchema],
    seed: u64,
) -> (Instance, BTreeSet<usize>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = x.clone();
    let mut kept = BTreeSet::new();
    for (&f, interval) in iv {
        if schema[f].kind == FeatureKind::BinaryIndicator {
            continue; // stays at x[f], inside its degenerate interval
        }
        let lo = interval.lo.max(schema[f].observed_min);
        let hi = interval.hi.min(schema[f].observed_max);
        if lo >= hi {
            kept.insert(f);
            continue;
        }
        out.0[f] = rng.gen_range(lo..=hi);
    }
    (out, kept)
}

fn next_above(v: f64) -> f64 {
    f64::from_bits(if v >= 0.0 {
        v.to_bits() + 1
    } else {
        v.to_bits() - 1
    })
}

fn next_below(v: f64) -> f64 {
    f64::from_bits(if v > 0.0 {
        v.to_bits() - 1
    } else if v == 0.0 {
        (-0.0f64).to_bits() + 1
    } else {
        v.to_bits() + 1
    })
}

/// Perturb every feature in `iv` to a value just outside its interval:
/// binary indicators flip, numeric features draw from a margin-width band
/// beyond a finite bound (choosing uniformly between sides when both are
/// finite). Features with no finite bound to violate are skipped and
/// returned; when nothing can be perturbed the instance yields None.
pub fn perturb_contrary(
    x: &Instance,
    iv: &FeatureIntervalMap,
    schema: &[FeatureSchema],
    margin: f64,
    seed: u64,
) -> Option<(Instance, BTreeSet<usize>)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = x.clone();
    let mut skipped = BTreeSet::new();
    let mut perturbed_any = false;
    for (&f, interval) in iv {
        if schema[f].kind == FeatureKind::BinaryIndicator {
            out.0[f] = if x[f] == 0.0 { 1.0 } else { 0.0 };
            perturbed_any = true;
            continue;
        }
        let delta = margin * schema[f].observed_range();
        let lo_finite = interval.lo.is_finite();
        let hi_finite = interval.hi.is_finite();
        if delta <= 0.0 || (!lo_finite && !hi_finite) {
            skipped.insert(f);
            continue;
        }
        let go_high = match (lo_finite, hi_finite) {
            (false, true) => true,
            (true, false) => false,
            _ => rng.gen_bool(0.5),
        };
        let u = 1.0 - rng.gen::<f64>(); // (0, 1]
        out.0[f] = if go_high {
            let v = interval.hi + u * delta;
            if v > interval.hi {
                v
            } else {
                next_above(interval.hi)
            }
        } else {
            let v = interval.lo - u * delta;
            if v < interval.lo {
                v
            } else {
                next_below(interval.lo)
            }
        };
        perturbed_any = true;
    }
    perturbed_any.then_some((out, skipped))
}

/// Mean relative output change over a perturbation set (the MAPE core).
/// Undefined (None) when `|y| < 1e-9` or the set is empty.
pub fn contrary_fidelity(y: f64, ys: &[f64]) -> Option<f64> {
    if y.abs() < 1e-9 || ys.is_empty() {
        return None;
    }
    Some(ys.iter().map(|yp| (y - yp).abs() / y.abs()).sum::<f64>() / ys.len() as f64)
}

/// One minus the mean relative output change; the exact complement of
/// [`contrary_fidelity`] over the same perturbation set.
pub fn supporting_fidelity(y: f64, ys: &[f64]) -> Option<f64> {
    contrary_fidelity(y, ys).map(|c| 1.0 - c)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase3Record {
    pub instance_id: usize,
    pub supporting: Option<f64>,
    pub contrary: Option<f64>,
    /// Model output for the original input: probability of the originally
    /// predicted class, or the regression value.
    pub y_original: f64,
    /// Features selected for perturbation but left unchanged (degenerate or
    /// unviolable intervals).
    pub skipped_features: BTreeSet<usize>,
    /// Reason the instance was excluded from the aggregates, if it was.
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Phase3Report {
    pub records: Vec<Phase3Record>,
    pub mean_supporting: Option<f64>,
    pub mean_contrary: Option<f64>,
    pub excluded: BTreeMap<String, usize>,
}

impl Phase3Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,supporting,contrary,y_original,excluded\n");
        for r in &self.records {
            let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.instance_id,
                fmt(r.supporting),
                fmt(r.contrary),
                r.y_original,
                r.excluded.clone().unwrap_or_default()
            ));
        }
        out
    }
}

fn output_for_class(model: &PredictiveModel, x: &Instance, class_is_one: bool) -> Result<f64, PhaseError> {
    let p = model.predict(x)?;
    Ok(match model.task() {
        TaskKind::Regression => p,
        TaskKind::Classification => {
            if class_is_one {
                p
            } else {
                1.0 - p
            }
        }
    })
}

/// Run the full perturbation-fidelity procedure over an evaluation set.
pub fn run_phase3(
    model: &PredictiveModel,
    cfg: &ExplainerConfig,
    train: &Dataset,
    eval: &Dataset,
    params: &Phase3Params,
    seed: u64,
) -> Result<Phase3Report, PhaseError> {
    if eval.num_rows() == 0 {
        return Err(PhaseError::EmptyEvalSet);
    }
    if !(1..=9).contains(&params.optimal_d) {
        return Err(PhaseError::InvalidParameter(format!(
            "optimal_d must be in 1..=9, got {}",
            params.optimal_d
        )));
    }
    let schema = &train.schema;

    let records: Vec<Result<Phase3Record, PhaseError>> = (0..eval.num_rows())
        .into_par_iter()
        .map(|id| {
            let x = eval.instance(id);
            let p_raw = model.predict(&x)?;
            let class_is_one = p_raw >= 0.5;
            let y = match model.task() {
                TaskKind::Classification => {
                    if class_is_one {
                        p_raw
                    } else {
                        1.0 - p_raw
                    }
                }
                TaskKind::Regression => p_raw,
            };
            let excluded_record = |reason: &str| Phase3Record {
                instance_id: id,
                supporting: None,
                contrary: None,
                y_original: y,
                skipped_features: BTreeSet::new(),
                excluded: Some(reason.to_string()),
            };
            if y.abs() < 1e-9 {
                return Ok(excluded_record(EXCLUDE_ZERO_OUTPUT));
            }

            let e = explain_averaged(model, train, cfg, &x, derive_seed(seed, &[id as u64, 0]))?;
            let Some(decile_sets) = decile_feature_sets(&e) else {
                return Ok(excluded_record(EXCLUDE_EMPTY_EXPLANATION));
            };
            let features = &decile_sets[params.optimal_d as usize - 1];
            let intervals = relevant_intervals(
                &e,
                features,
                params.optimal_p,
                model,
                &x,
                schema,
                params.grid_points,
            )?;

            let mut skipped_features = BTreeSet::new();
            let mut supporting_outputs = Vec::with_capacity(params.perturbation_repeats);
            for rep in 0..params.perturbation_repeats {
                let (xp, kept) = perturb_supporting(
                    &x,
                    &intervals,
                    schema,
                    derive_seed(seed, &[id as u64, 1, rep as u64]),
                );
                skipped_features.extend(kept);
                supporting_outputs.push(output_for_class(model, &xp, class_is_one)?);
            }
            let supporting = supporting_fidelity(y, &supporting_outputs);

            let mut contrary_outputs = Vec::with_capacity(params.perturbation_repeats);
            let mut violable = true;
            for rep in 0..params.perturbation_repeats {
                match perturb_contrary(
                    &x,
                    &intervals,
                    schema,
                    params.contrary_margin,
                    derive_seed(seed, &[id as u64, 2, rep as u64]),
                ) {
                    Some((xc, skipped)) => {
                        skipped_features.extend(skipped);
                        contrary_outputs.push(output_for_class(model, &xc, class_is_one)?);
                    }
                    None => {
                        violable = false;
                        skipped_features.extend(intervals.keys().copied());
                        break;
                    }
                }
            }
            let contrary = if violable {
                contrary_fidelity(y, &contrary_outputs)
            } else {
                None
            };

            Ok(Phase3Record {
                instance_id: id,
                supporting,
                contrary,
                y_original: y,
                skipped_features,
                excluded: (!violable).then(|| EXCLUDE_NO_VIOLABLE.to_string()),
            })
        })
        .collect();
    let records: Vec<Phase3Record> = records.into_iter().collect::<Result<_, _>>()?;

    let mut excluded: BTreeMap<String, usize> = BTreeMap::new();
    for r in &records {
        if let Some(reason) = &r.excluded {
            *excluded.entry(reason.clone()).or_insert(0) += 1;
        }
    }
    let mean_of = |take: &dyn Fn(&Phase3Record) -> Option<f64>| {
        let vals: Vec<f64> = records.iter().filter_map(take).collect();
        (!vals.is_empty()).then(|| stats::mean(&vals))
    };
    Ok(Phase3Report {
        mean_supporting: mean_of(&|r| r.supporting),
        mean_contrary: mean_of(&|r| r.contrary),
        records,
        excluded,
    })
}
