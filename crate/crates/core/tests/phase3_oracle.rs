//! Dual-implementation check of the phase 3 pipeline: a straight-line
//! reimplementation of the per-instance procedure must reproduce
//! `run_phase3` exactly on a synthetic set, step for step.

mod common;

use fidelity_core::explainers::{explain_averaged, ExplainerConfig, ExplainerKind};
use fidelity_core::models::{fit_cart, CartParams, PredictiveModel};
use fidelity_core::phase2::decile_feature_sets;
use fidelity_core::phase3::{
    perturb_contrary, perturb_supporting, relevant_intervals, run_phase3, Phase3Params,
};
use fidelity_core::seeding::derive_seed;
use fidelity_core::tabular::{Dataset, TaskKind};

fn synthetic() -> (PredictiveModel, Dataset, Dataset) {
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            vec![
                (i % 12) as f64,
                ((i * 5) % 9) as f64,
                ((i * 11) % 7) as f64,
            ]
        })
        .collect();
    let targets: Vec<f64> = rows
        .iter()
        .map(|r| ((r[0] > 5.0) != (r[1] > 4.0)) as u8 as f64)
        .collect();
    let train = Dataset::from_rows(
        (0..3usize).map(|f| format!("f{f}")).collect(),
        rows,
        targets,
        TaskKind::Classification,
    );
    let tree = fit_cart(&train, &CartParams::default(), 0).unwrap();
    let eval_rows: Vec<Vec<f64>> = (0..20)
        .map(|i| {
            vec![
                ((i * 7) % 12) as f64,
                ((i * 3) % 9) as f64,
                (i % 7) as f64,
            ]
        })
        .collect();
    let eval = Dataset::from_rows(
        (0..3usize).map(|f| format!("f{f}")).collect(),
        eval_rows,
        vec![0.0; 20],
        TaskKind::Classification,
    );
    (PredictiveModel::Tree(tree), train, eval)
}

#[test]
fn run_phase3_matches_straight_line_reimplementation() {
    let (model, train, eval) = synthetic();
    let cfg = ExplainerConfig::new(ExplainerKind::TreeShapley);
    let params = Phase3Params::new(3, 0.10);
    let seed = 42u64;

    let report = run_phase3(&model, &cfg, &train, &eval, &params, seed).unwrap();
    assert_eq!(report.records.len(), eval.num_rows());

    for id in 0..eval.num_rows() {
        let record = &report.records[id];
        assert_eq!(record.instance_id, id);

        // Step 1: original output for the predicted class.
        let x = eval.instance(id);
        let p = model.predict(&x).unwrap();
        let class_one = p >= 0.5;
        let y = if class_one { p } else { 1.0 - p };
        assert_eq!(record.y_original, y);

        // Step 2: averaged explanation under the derived seed.
        let e = explain_averaged(&model, &train, &cfg, &x, derive_seed(seed, &[id as u64, 0]))
            .unwrap();

        // Step 3: decile feature selection.
        let Some(sets) = decile_feature_sets(&e) else {
            assert_eq!(record.excluded.as_deref(), Some("empty_explanation"));
            continue;
        };
        let features = &sets[params.optimal_d as usize - 1];

        // Step 4: relevant value ranges.
        let intervals = relevant_intervals(
            &e,
            features,
            params.optimal_p,
            &model,
            &x,
            &train.schema,
            params.grid_points,
        )
        .unwrap();

        // Steps 5-6: perturbation sets and the two MAPE aggregates.
        let out_for = |xi: &fidelity_core::tabular::Instance| {
            let pp = model.predict(xi).unwrap();
            if class_one {
                pp
            } else {
                1.0 - pp
            }
        };
        let mut sup_sum = 0.0;
        for rep in 0..params.perturbation_repeats {
            let (xp, _) = perturb_supporting(
                &x,
                &intervals,
                &train.schema,
                derive_seed(seed, &[id as u64, 1, rep as u64]),
            );
            sup_sum += (y - out_for(&xp)).abs() / y.abs();
        }
        let expected_supporting = 1.0 - sup_sum / params.perturbation_repeats as f64;
        assert_eq!(record.supporting, Some(expected_supporting), "instance {id}");

        let mut con_sum = 0.0;
        let mut violable = true;
        let mut n_con = 0;
        for rep in 0..params.perturbation_repeats {
            match perturb_contrary(
                &x,
                &intervals,
                &train.schema,
                params.contrary_margin,
                derive_seed(seed, &[id as u64, 2, rep as u64]),
            ) {
                Some((xc, _)) => {
                    con_sum += (y - out_for(&xc)).abs() / y.abs();
                    n_con += 1;
                }
                None => {
                    violable = false;
                    break;
                }
            }
        }
        if violable {
            let expected_contrary = con_sum / n_con as f64;
            assert_eq!(record.contrary, Some(expected_contrary), "instance {id}");
        } else {
            assert_eq!(record.contrary, None);
        }
    }

    // Aggregates are plain means over the included records.
    let sup: Vec<f64> = report.records.iter().filter_map(|r| r.supporting).collect();
    let expected_mean = sup.iter().sum::<f64>() / sup.len() as f64;
    assert_eq!(report.mean_supporting, Some(expected_mean));
}

#[test]
fn white_box_oracle_supporting_is_one_with_path_intervals() {
    let (model, train, eval) = synthetic();
    let PredictiveModel::Tree(tree) = &model else {
        unreachable!()
    };
    let mut checked = 0;
    for id in 0..eval.num_rows() {
        let x = eval.instance(id);
        let iv = tree.path_intervals(&x).unwrap();
        if iv.is_empty() {
            continue;
        }
        let p = model.predict(&x).unwrap();
        let y = if p >= 0.5 { p } else { 1.0 - p };
        for rep in 0..10u64 {
            let (xp, _) = perturb_supporting(&x, &iv, &train.schema, derive_seed(7, &[id as u64, rep]));
            let pp = model.predict(&xp).unwrap();
            let yp = if p >= 0.5 { pp } else { 1.0 - pp };
            assert_eq!(yp, y, "instance {id} rep {rep} escaped its leaf");
        }
        checked += 1;
    }
    assert!(checked > 10, "synthetic set too degenerate: {checked}");
}
