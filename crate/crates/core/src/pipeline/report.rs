//! Writing task outputs and collating them into summary tables.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::tasks::{LatentOutcome, Task1Outcome, Task1Report, Task2Outcome, Task2Report, Task3Outcome, Task3Report};
use crate::error::{Error, Result};
use crate::evalmetrics::{self, Estimate, Metric};
use crate::latentspace;

pub const TASK1_DIR: &str = "task1";
pub const TASK2_DIR: &str = "task2";
pub const TASK3_DIR: &str = "task3";
pub const LATENT_DIR: &str = "latent";
pub const TABLES_DIR: &str = "tables";
pub const DATA_DIR: &str = "data";
pub const REPORT_FILE: &str = "report.json";
pub const SPLIT_FILE: &str = "split.json";

pub fn bundle_file(name: &str) -> String {
    format!("bundle_{name}.json")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

pub fn save_task1(dir: &Path, o: &Task1Outcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let mut written = Vec::new();
    let report = dir.join(REPORT_FILE);
    write_json(&report, &o.report)?;
    let split = dir.join(SPLIT_FILE);
    write_json(&split, &o.plan)?;
    written.extend([report, split]);
    for f in &o.fitted {
        let b = dir.join(bundle_file(&f.name));
        f.bundle.save(&b)?;
        let s = dir.join(format!("scatter_{}.csv", f.name));
        evalmetrics::write_scatter_csv(create(&s)?, &o.plan.test_ids, &o.test_truth, &f.predictions)?;
        let ba = dir.join(format!("bland_altman_{}.csv", f.name));
        evalmetrics::write_bland_altman_csv(create(&ba)?, &f.agreement)?;
        written.extend([b, s, ba]);
    }
    Ok(written)
}

#[derive(Serialize)]
struct Task2Split<'a> {
    train_ids: &'a [String],
    test_ids: &'a [String],
}

pub fn save_task2(dir: &Path, o: &Task2Outcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let report = dir.join(REPORT_FILE);
    write_json(&report, &o.report)?;
    let split = dir.join(SPLIT_FILE);
    write_json(&split, &Task2Split { train_ids: &o.train_ids, test_ids: &o.test_ids })?;
    let mut written = vec![report, split];
    for (name, bundle) in &o.bundles {
        let b = dir.join(bundle_file(name));
        bundle.save(&b)?;
        written.push(b);
    }
    for (scheme, points) in &o.roc {
        let p = dir.join(format!("roc_{}.csv", scheme.slug()));
        evalmetrics::write_roc_csv(create(&p)?, points)?;
        written.push(p);
    }
    for ((target, pred), (_, t)) in o.predictions.iter().zip(&o.truth) {
        let p = dir.join(format!("scatter_{}.csv", target.as_str()));
        evalmetrics::write_scatter_csv(create(&p)?, &o.test_ids, t, pred)?;
        written.push(p);
    }
    Ok(written)
}

pub fn save_task3(dir: &Path, o: &Task3Outcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let report = dir.join(REPORT_FILE);
    write_json(&report, &o.report)?;
    let preds = dir.join("predictions.csv");
    let mut w = csv::Writer::from_writer(create(&preds)?);
    w.write_record(["id", "true_baseline", "pred_baseline", "true_followup", "pred_followup"])?;
    for i in 0..o.ids.len() {
        w.write_record([
            o.ids[i].clone(),
            o.true_baseline[i].to_string(),
            o.pred_baseline[i].to_string(),
            o.true_followup[i].to_string(),
            o.pred_followup[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&preds, e))?;
    Ok(vec![report, preds])
}

pub fn save_latent(dir: &Path, o: &LatentOutcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let orig = dir.join("embedding_original.csv");
    latentspace::write_embedding_csv(create(&orig)?, &o.original)?;
    let lat = dir.join("embedding_latent.csv");
    latentspace::write_embedding_csv(create(&lat)?, &o.latent)?;
    let cs = dir.join("case_study.csv");
    latentspace::write_case_study_csv(create(&cs)?, &o.studies)?;
    Ok(vec![orig, lat, cs])
}

fn estimate_cells(e: Option<Estimate>) -> [String; 3] {
    match e {
        Some(e) => [e.point.to_string(), e.lower.to_string(), e.upper.to_string()],
        None => [String::new(), String::new(), String::new()],
    }
}

fn metric_header(prefix: &[&str], metrics: &[Metric]) -> Vec<String> {
    let mut h: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    for m in metrics {
        let n = m.as_str();
        h.extend([n.to_string(), format!("{n}_lower"), format!("{n}_upper")]);
    }
    h
}

/// Model comparison: one row per model with every metric and its interval.
pub fn write_table1(path: &Path, r: &Task1Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(metric_header(&["model", "n_components", "n_train", "n_test", "loa_lower", "loa_upper"], &Metric::REGRESSION))?;
    for row in &r.rows {
        let mut rec = vec![
            row.name.clone(),
            row.n_components.to_string(),
            row.report.n_train.to_string(),
            row.report.n_test.to_string(),
            row.agreement.lower_loa.to_string(),
            row.agreement.upper_loa.to_string(),
        ];
        for m in Metric::REGRESSION {
            rec.extend(estimate_cells(row.report.get(m)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Future fitness: regression outcomes, then one row per delta scheme.
pub fn write_table2(path: &Path, r: &Task2Report) -> Result<()> {
    let metrics = [Metric::Rmse, Metric::R2, Metric::Pearson, Metric::Mae, Metric::Auroc];
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(metric_header(&["outcome", "n_train", "n_test", "threshold_low", "threshold_high"], &metrics))?;
    for row in &r.regression {
        let mut rec = vec![row.target.as_str().to_string(), row.report.n_train.to_string(), row.report.n_test.to_string(), String::new(), String::new()];
        for m in metrics {
            rec.extend(estimate_cells(row.report.get(m)));
        }
        w.write_record(&rec)?;
    }
    for row in &r.classification {
        let mut rec = vec![
            format!("delta_{}", row.scheme.as_str()),
            row.n_train_retained.to_string(),
            row.n_test_retained.to_string(),
            row.thresholds.low.to_string(),
            row.thresholds.high.to_string(),
        ];
        for m in metrics {
            rec.extend(estimate_cells(row.report.get(m)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Subgroup breakdown of the comprehensive dense model.
pub fn write_table3(path: &Path, r: &Task1Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(metric_header(&["grouping", "group", "n"], &Metric::REGRESSION))?;
    for g in &r.subgroups {
        let mut rec = vec![g.grouping.as_str().to_string(), g.label.clone(), g.n.to_string()];
        for m in Metric::REGRESSION {
            rec.extend(estimate_cells(g.metrics.get(&m).copied()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_task3_table(path: &Path, r: &Task3Report) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["quantity", "value", "lower", "upper"])?;
    let mut put = |q: &str, v: [String; 3]| w.write_record([q.to_string(), v[0].clone(), v[1].clone(), v[2].clone()]);
    put("n_matched", [r.n_matched.to_string(), String::new(), String::new()])?;
    for m in [Metric::Rmse, Metric::R2, Metric::Pearson, Metric::Mae] {
        put(&format!("followup_{}", m.as_str()), estimate_cells(r.followup.get(m)))?;
    }
    put("corr_followup_pred_vs_baseline_truth", [r.corr_followup_pred_vs_baseline_truth.to_string(), String::new(), String::new()])?;
    put("delta_correlation", [r.delta_correlation.to_string(), String::new(), String::new()])?;
    put("delta_pvalue", [r.delta_pvalue.to_string(), String::new(), String::new()])?;
    let repro = r.reproduces_task1.map(|b| b.to_string()).unwrap_or_default();
    put("reproduces_task1", [repro, String::new(), String::new()])?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Collate whichever task reports exist under `out` into `out/tables`.
pub fn write_tables(out: &Path) -> Result<Vec<PathBuf>> {
    let tables = out.join(TABLES_DIR);
    ensure_dir(&tables)?;
    let mut written = Vec::new();
    let t1 = out.join(TASK1_DIR).join(REPORT_FILE);
    if t1.exists() {
        let r: Task1Report = read_json(&t1)?;
        let (a, b) = (tables.join("table1.csv"), tables.join("table3.csv"));
        write_table1(&a, &r)?;
        write_table3(&b, &r)?;
        written.extend([a, b]);
    }
    let t2 = out.join(TASK2_DIR).join(REPORT_FILE);
    if t2.exists() {
        let p = tables.join("table2.csv");
        write_table2(&p, &read_json(&t2)?)?;
        written.push(p);
    }
    let t3 = out.join(TASK3_DIR).join(REPORT_FILE);
    if t3.exists() {
        let p = tables.join("task3.csv");
        write_task3_table(&p, &read_json(&t3)?)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(Error::Data(format!("no task reports under {}", out.display())));
    }
    Ok(written)
}
