//! End-to-end orchestration: dataset cache, the three tasks, the latent
//! analysis, tables and the run manifest. Each `*_in` function reads and
//! writes under an output root so the CLI steps can run separately.

pub mod config;
pub mod data;
pub mod manifest;
pub mod report;
pub mod tasks;

use std::path::{Path, PathBuf};

use log::info;

pub use config::{Config, CovariateSet, EvaluationConfig, ModelChoice, RowSpec, Task1Config, Task2Config};
pub use data::{build_dataset, generate_participants, holdout_split, Dataset, Exclusion, SplitPlan};
pub use manifest::{sha256_file, sha256_hex, Manifest};
pub use tasks::{
    run_latent, run_task1, run_task2, run_task3, LatentOutcome, Target, Task1Outcome, Task1Report, Task2Outcome,
    Task2Report, Task3Outcome, Task3Report, COMPREHENSIVE_DENSE,
};

use crate::error::{Error, Result};
use crate::featurize::FeatureVector;
use crate::models::ModelBundle;
use report::{bundle_file, read_json, DATA_DIR, LATENT_DIR, REPORT_FILE, SPLIT_FILE, TASK1_DIR, TASK2_DIR, TASK3_DIR};

pub fn data_dir(out: &Path) -> PathBuf {
    out.join(DATA_DIR)
}

/// The frozen comprehensive dense bundle task 1 writes and tasks 2, 3 and
/// the latent analysis read.
pub fn frozen_bundle_path(out: &Path) -> PathBuf {
    out.join(TASK1_DIR).join(bundle_file(COMPREHENSIVE_DENSE))
}

fn load_frozen(out: &Path) -> Result<ModelBundle> {
    let path = frozen_bundle_path(out);
    if !path.exists() {
        return Err(Error::Config(format!("{} not found; run task1 first", path.display())));
    }
    ModelBundle::load(&path)
}

pub fn run_task1_in(out: &Path, cfg: &Config) -> Result<Task1Report> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let o = run_task1(&ds, cfg)?;
    report::save_task1(&out.join(TASK1_DIR), &o)?;
    Ok(o.report)
}

pub fn run_task2_in(out: &Path, cfg: &Config) -> Result<Task2Report> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let frozen = load_frozen(out)?;
    let transform = frozen.transform.as_ref().ok_or_else(|| Error::Data("frozen bundle has no transform".into()))?;
    let o = run_task2(&ds, transform, cfg)?;
    report::save_task2(&out.join(TASK2_DIR), &o)?;
    Ok(o.report)
}

pub fn run_task3_in(out: &Path, cfg: &Config) -> Result<Task3Report> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let path = frozen_bundle_path(out);
    let before = if path.exists() { sha256_file(&path)? } else { String::new() };
    let bundle = load_frozen(out)?;
    let mut o = run_task3(&ds, &bundle, cfg)?;

    let t1 = out.join(TASK1_DIR);
    if t1.join(REPORT_FILE).exists() && t1.join(SPLIT_FILE).exists() {
        let prior: Task1Report = read_json(&t1.join(REPORT_FILE))?;
        let plan: SplitPlan = read_json(&t1.join(SPLIT_FILE))?;
        if let Some(row) = prior.row(COMPREHENSIVE_DENSE) {
            let test: Vec<&FeatureVector> = data::select(&ds.features_baseline, &plan.test_ids)?;
            let (again, _) = tasks::evaluate_task1_row(COMPREHENSIVE_DENSE, &bundle, &test, prior.n_train, cfg)?;
            let same = again == row.report;
            info!("task 3: baseline predictions reproduce task 1 report: {same}");
            o.report.reproduces_task1 = Some(same);
        }
    }
    o.report.bundle_sha256_before = Some(before);
    o.report.bundle_sha256_after = Some(sha256_file(&path)?);
    report::save_task3(&out.join(TASK3_DIR), &o)?;
    Ok(o.report)
}

pub fn run_latent_in(out: &Path, cfg: &Config) -> Result<LatentOutcome> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let bundle = load_frozen(out)?;
    let o = run_latent(&ds, &bundle, cfg)?;
    report::save_latent(&out.join(LATENT_DIR), &o)?;
    Ok(o)
}

/// Hash every output file and write `manifest.json`.
pub fn write_manifest(out: &Path, cfg: &Config) -> Result<Manifest> {
    let m = Manifest::scan(out, cfg.seed, &cfg.to_toml())?;
    m.write(out)?;
    Ok(m)
}

pub const MODELS_DIR: &str = "models";
pub const EVALUATIONS_DIR: &str = "evaluations";

/// Train one comparison row on the task-1 split and save its bundle under
/// `out/models`.
pub fn train_row_in(out: &Path, cfg: &Config, row: RowSpec) -> Result<PathBuf> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let plan = SplitPlan::from_features(&ds.features_baseline, cfg.train.validation_fraction, cfg.split_seed())?;
    let train = data::select(&ds.features_baseline, &plan.train_ids)?;
    let y: Vec<f64> = train.iter().map(|r| Target::Current.value(r)).collect::<Result<_>>()?;
    let transform = match row.model {
        ModelChoice::Equation => None,
        _ => Some(tasks::fit_transform(&train, row.covariates)?),
    };
    let bundle = tasks::fit_model("task1", row, transform.as_ref(), &train, &y, crate::models::ModelKind::Regressor, cfg)?;
    let dir = out.join(MODELS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(bundle_file(&row.name()));
    bundle.save(&path)?;
    Ok(path)
}

/// Evaluate any saved bundle on the task-1 test split and write the report
/// under `out/evaluations`.
pub fn evaluate_bundle_in(out: &Path, cfg: &Config, bundle_path: &Path) -> Result<crate::evalmetrics::EvalReport> {
    let ds = Dataset::load_or_build(&data_dir(out), cfg)?;
    let bundle = ModelBundle::load(bundle_path)?;
    if bundle.is_classifier() {
        return Err(Error::Unsupported("evaluate expects a regression bundle".into()));
    }
    let plan = SplitPlan::from_features(&ds.features_baseline, cfg.train.validation_fraction, cfg.split_seed())?;
    let test = data::select(&ds.features_baseline, &plan.test_ids)?;
    let stem = bundle_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "bundle".into());
    let name = stem.strip_prefix("bundle_").unwrap_or(&stem).to_string();
    let (report, _) = tasks::evaluate_task1_row(&name, &bundle, &test, plan.train_ids.len(), cfg)?;
    let dir = out.join(EVALUATIONS_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    report::write_json(&dir.join(format!("{name}.json")), &report)?;
    Ok(report)
}
