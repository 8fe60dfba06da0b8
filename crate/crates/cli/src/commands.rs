//! Implementations of the pipeline commands. Each command reads the
//! manifest chain in the output directory, runs its module, writes its
//! artifacts, and appends a manifest entry.

use std::path::{Path, PathBuf};
use std::time::Instant;

use fidelity_core::explainers::ExplainerKind;
use fidelity_core::models::{eval_accuracy, fit_cart, fit_gbt, AccuracyReport, PredictiveModel};
use fidelity_core::phase1::run_phase1;
use fidelity_core::phase2::{
    bin_size_search, decile_search, validate_phase2, BinSearchResult, DecileSearchResult,
};
use fidelity_core::phase3::{run_phase3, Phase3Params, Phase3Report};
use fidelity_core::tabular::{balance_downsample, load_csv, train_test_split, Dataset, TaskKind};

use crate::config::{ModelKind, RunConfig};
use crate::manifest::RunManifest;
use crate::{CliError, CommonArgs, PrepArgs, ReportArgs};

pub const TRAIN_FILE: &str = "train.json";
pub const TEST_FILE: &str = "test.json";
pub const MODEL_FILE: &str = "model.json";
pub const ACCURACY_FILE: &str = "accuracy.json";
pub const PHASE1_JSON: &str = "phase1_report.json";
pub const PHASE1_CSV: &str = "phase1_report.csv";
pub const PHASE2_DECILE_JSON: &str = "phase2_decile.json";
pub const PHASE2_DECILE_CSV: &str = "phase2_decile_curve.csv";
pub const PHASE2_BINS_JSON: &str = "phase2_bins.json";
pub const PHASE2_BINS_CSV: &str = "phase2_bin_curve.csv";
pub const PHASE2_VALIDATION_JSON: &str = "phase2_validation.json";
pub const PHASE2_VALIDATION_CSV: &str = "phase2_validation.csv";
pub const PHASE3_JSON: &str = "phase3_report.json";
pub const PHASE3_CSV: &str = "phase3_report.csv";

fn write_artifact(out_dir: &Path, name: &str, content: &str) -> Result<String, CliError> {
    let path = out_dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    Ok(name.to_string())
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Dataset::from_json(&text)
        .map_err(|e| CliError::Data(format!("corrupt dataset {}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<PredictiveModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    PredictiveModel::from_json(&text)
        .map_err(|e| CliError::Data(format!("corrupt model {}: {e}", path.display())))
}

fn require_tree(model: &PredictiveModel) -> Result<&fidelity_core::DecisionTree, CliError> {
    match model {
        PredictiveModel::Tree(t) => Ok(t),
        PredictiveModel::Ensemble(_) => Err(CliError::Data(
            "this phase evaluates the white box; train with --model tree".into(),
        )),
    }
}

fn load_phase_inputs(out_dir: &Path, manifest: &RunManifest) -> Result<(Dataset, Dataset), CliError> {
    let train = read_dataset(&manifest.require_artifact(out_dir, TRAIN_FILE, "prep")?)?;
    let test = read_dataset(&manifest.require_artifact(out_dir, TEST_FILE, "prep")?)?;
    Ok((train, test))
}

/// prep: load CSV, optionally balance, split, write train/test datasets and
/// a fresh manifest with the config snapshot.
pub fn cmd_prep(args: &PrepArgs, config: RunConfig, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let ds = &config.dataset;
    let full = load_csv(&ds.path, &ds.target_column, ds.task)?;
    let full = if ds.balance && ds.task == TaskKind::Classification {
        balance_downsample(&full, ds.seed)?
    } else {
        full
    };
    let (train, test) = train_test_split(&full, ds.split_fraction, ds.seed)?;

    let mut artifacts = Vec::new();
    artifacts.push(write_artifact(out_dir, TRAIN_FILE, &train.to_json())?);
    artifacts.push(write_artifact(out_dir, TEST_FILE, &test.to_json())?);

    let mut manifest = RunManifest::new(config);
    manifest.record("prep", artifacts, started.elapsed().as_millis());
    manifest.save(out_dir)?;
    if !args.common.quiet {
        println!(
            "prep: {} train rows, {} test rows -> {}",
            train.num_rows(),
            test.num_rows(),
            out_dir.display()
        );
    }
    Ok(())
}

/// train: fit the configured model on the training split and report
/// accuracy on the test split.
pub fn cmd_train(args: &CommonArgs, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(out_dir)?;
    args.apply_overrides(&mut manifest)?;
    let config = manifest.config.clone();
    let (train, test) = load_phase_inputs(out_dir, &manifest)?;

    let model = match config.model.kind {
        ModelKind::Tree => {
            PredictiveModel::Tree(fit_cart(&train, &config.model.cart_params(), config.seed)?)
        }
        ModelKind::Ensemble => {
            PredictiveModel::Ensemble(fit_gbt(&train, &config.model.gbt_params(), config.seed)?)
        }
    };
    let accuracy = eval_accuracy(&model, &test)?;

    let mut artifacts = Vec::new();
    artifacts.push(write_artifact(out_dir, MODEL_FILE, &model.to_json())?);
    artifacts.push(write_artifact(
        out_dir,
        ACCURACY_FILE,
        &serde_json::to_string_pretty(&accuracy).unwrap(),
    )?);
    manifest.record("train", artifacts, started.elapsed().as_millis());
    manifest.save(out_dir)?;
    if !args.quiet {
        match (accuracy.f1, accuracy.mae, accuracy.mape) {
            (Some(f1), _, _) => println!("train: test F1 = {f1:.4}"),
            (_, Some(mae), Some(mape)) => println!("train: test MAE = {mae:.4}, MAPE = {mape:.4}"),
            _ => println!("train: done"),
        }
    }
    Ok(())
}

pub fn cmd_phase1(args: &CommonArgs, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(out_dir)?;
    args.apply_overrides(&mut manifest)?;
    let config = manifest.config.clone();
    let (train, test) = load_phase_inputs(out_dir, &manifest)?;
    let model = read_model(&manifest.require_artifact(out_dir, MODEL_FILE, "train")?)?;
    let tree = require_tree(&model)?;

    let report = run_phase1(tree, &config.explainer.to_core(), &train, &test, config.seed)?;

    let mut artifacts = Vec::new();
    artifacts.push(write_artifact(out_dir, PHASE1_JSON, &report.to_json())?);
    artifacts.push(write_artifact(out_dir, PHASE1_CSV, &report.to_csv())?);
    manifest.record("phase1", artifacts, started.elapsed().as_millis());
    manifest.save(out_dir)?;
    if !args.quiet {
        println!(
            "phase1: mean recall = {}, mean precision = {}",
            fmt_opt(report.mean_recall),
            fmt_opt(report.mean_precision)
        );
    }
    Ok(())
}

pub fn cmd_phase2(args: &CommonArgs, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(out_dir)?;
    args.apply_overrides(&mut manifest)?;
    let config = manifest.config.clone();
    let (train, test) = load_phase_inputs(out_dir, &manifest)?;
    let model = read_model(&manifest.require_artifact(out_dir, MODEL_FILE, "train")?)?;
    let tree = require_tree(&model)?;
    let explainer = config.explainer.to_core();

    let deciles = decile_search(tree, &explainer, &train, &test, config.seed)?;
    let mut artifacts = Vec::new();
    artifacts.push(write_artifact(out_dir, PHASE2_DECILE_JSON, &deciles.to_json())?);
    artifacts.push(write_artifact(out_dir, PHASE2_DECILE_CSV, &deciles.curve_csv())?);

    // The surrogate explainer carries its own value intervals; the bin-size
    // search only applies to weight-only explainers.
    let optimal_p = if explainer.kind == ExplainerKind::TreeShapley {
        let bins = bin_size_search(
            tree,
            &explainer,
            &train,
            &test,
            &config.phase2.candidate_ps,
            config.phase2.grid_points,
            config.seed,
        )?;
        artifacts.push(write_artifact(out_dir, PHASE2_BINS_JSON, &bins.to_json())?);
        artifacts.push(write_artifact(out_dir, PHASE2_BINS_CSV, &bins.curve_csv())?);
        bins.optimal_p
    } else {
        config.phase3.optimal_p.unwrap_or(0.1)
    };

    let params = Phase3Params {
        optimal_d: deciles.optimal_d,
        optimal_p,
        perturbation_repeats: config.phase3.repeats,
        contrary_margin: config.phase3.margin,
        grid_points: config.phase2.grid_points,
    };
    let validation = validate_phase2(
        tree,
        &explainer,
        &train,
        &test,
        deciles.optimal_d,
        optimal_p,
        &params,
        config.seed,
    )?;
    artifacts.push(write_artifact(
        out_dir,
        PHASE2_VALIDATION_JSON,
        &validation.to_json(),
    )?);
    artifacts.push(write_artifact(
        out_dir,
        PHASE2_VALIDATION_CSV,
        &validation.to_csv(),
    )?);

    manifest.record("phase2", artifacts, started.elapsed().as_millis());
    manifest.save(out_dir)?;
    if !args.quiet {
        println!(
            "phase2: optimal_d = {}, optimal_p = {optimal_p}",
            deciles.optimal_d
        );
    }
    Ok(())
}

pub fn cmd_phase3(args: &CommonArgs, out_dir: &Path) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(out_dir)?;
    args.apply_overrides(&mut manifest)?;
    let config = manifest.config.clone();
    let (train, test) = load_phase_inputs(out_dir, &manifest)?;
    let model = read_model(&manifest.require_artifact(out_dir, MODEL_FILE, "train")?)?;
    let explainer = config.explainer.to_core();

    // Parameters: explicit flags/config win, then the phase-2 reports.
    let optimal_d = match config.phase3.optimal_d {
        Some(d) => d,
        None => read_json::<DecileSearchResult>(&out_dir.join(PHASE2_DECILE_JSON))
            .ok_or(CliError::MissingPrerequisite(
                "no decile range: run `fidelity phase2` first or pass --d".into(),
            ))?
            .optimal_d,
    };
    let optimal_p = match config.phase3.optimal_p {
        Some(p) => p,
        None => {
            if explainer.kind == ExplainerKind::Surrogate {
                0.1 // unused: surrogate explanations carry their intervals
            } else {
                read_json::<BinSearchResult>(&out_dir.join(PHASE2_BINS_JSON))
                    .ok_or(CliError::MissingPrerequisite(
                        "no bin size: run `fidelity phase2` first or pass --p".into(),
                    ))?
                    .optimal_p
            }
        }
    };

    let params = Phase3Params {
        optimal_d,
        optimal_p,
        perturbation_repeats: config.phase3.repeats,
        contrary_margin: config.phase3.margin,
        grid_points: config.phase2.grid_points,
    };
    let report = run_phase3(&model, &explainer, &train, &test, &params, config.seed)?;

    let mut artifacts = Vec::new();
    artifacts.push(write_artifact(out_dir, PHASE3_JSON, &report.to_json())?);
    artifacts.push(write_artifact(out_dir, PHASE3_CSV, &report.to_csv())?);
    manifest.record("phase3", artifacts, started.elapsed().as_millis());
    manifest.save(out_dir)?;
    if !args.quiet {
        println!(
            "phase3: mean supporting = {}, mean contrary = {} (d = {optimal_d}, p = {optimal_p})",
            fmt_opt(report.mean_supporting),
            fmt_opt(report.mean_contrary)
        );
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Option<T> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

struct ReportRow {
    dataset: String,
    model: String,
    explainer: String,
    phase: String,
    metric: String,
    mean: f64,
    count_skipped: usize,
}

/// report: merge per-run aggregates from one or more run directories into a
/// long-format CSV (one row per metric) and a wide pivot.
pub fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    if args.runs.is_empty() {
        return Err(CliError::Usage("report needs at least one run directory".into()));
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for dir in &args.runs {
        let manifest = RunManifest::load(dir)?;
        let config = &manifest.config;
        let dataset = config.dataset_name();
        let model = match config.model.kind {
            ModelKind::Tree => "tree",
            ModelKind::Ensemble => "ensemble",
        }
        .to_string();
        let explainer = match config.explainer.kind {
            ExplainerKind::Surrogate => "surrogate",
            ExplainerKind::TreeShapley => "tree_shapley",
        }
        .to_string();
        let mut push = |phase: &str, metric: &str, mean: f64, skipped: usize| {
            rows.push(ReportRow {
                dataset: dataset.clone(),
                model: model.clone(),
                explainer: explainer.clone(),
                phase: phase.into(),
                metric: metric.into(),
                mean,
                count_skipped: skipped,
            });
        };

        if let Some(acc) = read_json::<AccuracyReport>(&dir.join(ACCURACY_FILE)) {
            if let Some(f1) = acc.f1 {
                push("train", "f1", f1, 0);
            }
            if let Some(mae) = acc.mae {
                push("train", "mae", mae, 0);
            }
            if let Some(mape) = acc.mape {
                push("train", "mape", mape, acc.mape_skipped);
            }
        }
        if let Some(p1) = read_json::<fidelity_core::phase1::Phase1Report>(&dir.join(PHASE1_JSON)) {
            let skipped: usize = p1.skipped.values().sum();
            if let Some(r) = p1.mean_recall {
                push("phase1", "recall", r, skipped);
            }
            if let Some(p) = p1.mean_precision {
                push("phase1", "precision", p, skipped);
            }
        }
        if let Some(d) = read_json::<DecileSearchResult>(&dir.join(PHASE2_DECILE_JSON)) {
            let skipped: usize = d.skipped.values().sum();
            push("phase2", "optimal_d", d.optimal_d as f64, skipped);
            push("phase2", "best_f1", d.per_d_scores[&d.optimal_d], skipped);
        }
        if let Some(b) = read_json::<BinSearchResult>(&dir.join(PHASE2_BINS_JSON)) {
            let skipped: usize = b.skipped.values().sum();
            let best = b
                .per_p_distances
                .iter()
                .find(|(p, _)| *p == b.optimal_p)
                .map(|(_, d)| *d)
                .unwrap_or(f64::NAN);
            push("phase2", "optimal_p", b.optimal_p, skipped);
            push("phase2", "best_distance", best, skipped);
        }
        if let Some(p3) = read_json::<Phase3Report>(&dir.join(PHASE3_JSON)) {
            let excluded: usize = p3.excluded.values().sum();
            if let Some(s) = p3.mean_supporting {
                push("phase3", "supporting", s, excluded);
            }
            if let Some(c) = p3.mean_contrary {
                push("phase3", "contrary", c, excluded);
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data(
            "no reports found in the given run directories".into(),
        ));
    }

    let out_dir: PathBuf = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out_dir.display())))?;

    let mut long = String::from("dataset,model,explainer,phase,metric,mean,count_skipped\n");
    for r in &rows {
        long.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.dataset, r.model, r.explainer, r.phase, r.metric, r.mean, r.count_skipped
        ));
    }
    std::fs::write(out_dir.join("report_long.csv"), &long)
        .map_err(|e| CliError::Data(format!("cannot write report_long.csv: {e}")))?;

    // Wide pivot: one row per run and phase, metrics as columns.
    let mut metrics: Vec<String> = rows.iter().map(|r| r.metric.clone()).collect();
    metrics.sort();
    metrics.dedup();
    let mut keys: Vec<(String, String, String, String)> = rows
        .iter()
        .map(|r| (r.dataset.clone(), r.model.clone(), r.explainer.clone(), r.phase.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    let mut wide = format!("dataset,model,explainer,phase,{}\n", metrics.join(","));
    for key in keys {
        let mut line = format!("{},{},{},{}", key.0, key.1, key.2, key.3);
        for m in &metrics {
            let cell = rows
                .iter()
                .find(|r| {
                    (&r.dataset, &r.model, &r.explainer, &r.phase) == (&key.0, &key.1, &key.2, &key.3)
                        && &r.metric == m
                })
                .map(|r| r.mean.to_string())
                .unwrap_or_default();
            line.push_str(&format!(",{cell}"));
        }
        wide.push_str(&line);
        wide.push('\n');
    }
    std::fs::write(out_dir.join("report_wide.csv"), &wide)
        .map_err(|e| CliError::Data(format!("cannot write report_wide.csv: {e}")))?;

    println!(
        "report: {} rows over {} runs -> {}",
        rows.len(),
        args.runs.len(),
        out_dir.display()
    );
    Ok(())
}
