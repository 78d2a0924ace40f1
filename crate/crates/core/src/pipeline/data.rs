//! Cohort generation through feature extraction, the on-disk cache of the
//! results, and the train/test split rules.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::cohortgen::{self, Cohort, Participant};
use crate::error::{Error, Result};
use crate::featurize::{self, FeatureLayout, FeatureVector};
use crate::seed;
use crate::sensorproc;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub cohort: Cohort,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Baseline records. Longitudinal participants carry `vo2max_future`.
    pub baseline: Vec<Participant>,
    /// Follow-up records of longitudinal participants.
    pub followup: Vec<Participant>,
    pub features_baseline: Vec<FeatureVector>,
    pub features_followup: Vec<FeatureVector>,
    pub excluded: Vec<Exclusion>,
}

/// Simulate, clean and summarise one week per participant. Ineligible weeks
/// are reported rather than failing the batch. Output order follows input.
pub fn featurize_participants(
    participants: &[Participant],
    cfg: &Config,
    layout: &FeatureLayout,
) -> (Vec<FeatureVector>, Vec<Exclusion>) {
    let sensor_seed = cfg.sensor_seed();
    let results: Vec<Result<FeatureVector>> = participants
        .par_iter()
        .map(|p| {
            let week = cohortgen::generate_sensor_week(p, &cfg.sensor, sensor_seed)?;
            let clean = sensorproc::clean_week(&week, &cfg.preprocess)?;
            featurize::build_feature_vector(p, &clean, layout)
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut excluded = Vec::new();
    for (p, r) in participants.iter().zip(results) {
        match r {
            Ok(fv) => rows.push(fv),
            Err(e) => {
                warn!("excluding {} ({}): {e}", p.id, p.cohort.as_str());
                excluded.push(Exclusion { id: p.id.clone(), cohort: p.cohort, reason: e.to_string() });
            }
        }
    }
    (rows, excluded)
}

/// Baseline cohort plus follow-up snapshots of the longitudinal
/// participants. Baseline records carry `vo2max_future`.
pub fn generate_participants(cfg: &Config) -> Result<(Vec<Participant>, Vec<Participant>)> {
    let mut baseline = cohortgen::generate_cohort(&cfg.population)?;
    let first_longitudinal = cfg.population.n_baseline_only;
    let followup: Vec<Participant> = baseline[first_longitudinal..]
        .par_iter()
        .map(|p| cohortgen::generate_future_snapshot(p, &cfg.population, &cfg.drift))
        .collect::<Result<_>>()?;
    for (p, f) in baseline[first_longitudinal..].iter_mut().zip(&followup) {
        p.vo2max_future = f.vo2max_future;
    }
    info!("generated {} baseline and {} follow-up participants", baseline.len(), followup.len());
    Ok((baseline, followup))
}

/// Generate the cohort with follow-up snapshots and extract every feature
/// vector.
pub fn build_dataset(cfg: &Config) -> Result<Dataset> {
    let layout = FeatureLayout::canonical();
    let (baseline, followup) = generate_participants(cfg)?;
    let (features_baseline, mut excluded) = featurize_participants(&baseline, cfg, &layout);
    let (features_followup, ex2) = featurize_participants(&followup, cfg, &layout);
    excluded.extend(ex2);
    info!(
        "{} baseline and {} follow-up weeks featurized, {} excluded",
        features_baseline.len(),
        features_followup.len(),
        excluded.len()
    );
    Ok(Dataset { baseline, followup, features_baseline, features_followup, excluded })
}

pub const COHORT_FILE: &str = "cohort.csv";
pub const FEATURES_BASELINE_FILE: &str = "features_baseline.csv";
pub const FEATURES_FOLLOWUP_FILE: &str = "features_followup.csv";
pub const EXCLUSIONS_FILE: &str = "exclusions.csv";
/// Hash of the settings the cache was generated from.
pub const STAMP_FILE: &str = "generation.sha256";

/// Everything that shapes the cached data: seed, population, drift, sensor
/// simulation and preprocessing.
pub fn generation_stamp(cfg: &Config) -> String {
    let parts = serde_json::to_string(&(cfg.seed, &cfg.population, &cfg.drift, &cfg.sensor, &cfg.preprocess))
        .expect("generation settings serialize");
    super::manifest::sha256_hex(parts.as_bytes())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let layout = FeatureLayout::canonical();
        let cohort_path = dir.join(COHORT_FILE);
        let all: Vec<Participant> = self.baseline.iter().chain(&self.followup).cloned().collect();
        cohortgen::write_cohort_csv(create(&cohort_path)?, &all)?;
        let baseline = dir.join(FEATURES_BASELINE_FILE);
        featurize::write_features_csv(create(&baseline)?, &layout, &self.features_baseline)?;
        let followup = dir.join(FEATURES_FOLLOWUP_FILE);
        featurize::write_features_csv(create(&followup)?, &layout, &self.features_followup)?;
        let ex = dir.join(EXCLUSIONS_FILE);
        let mut w = csv::Writer::from_writer(create(&ex)?);
        w.write_record(["id", "cohort", "reason"])?;
        for e in &self.excluded {
            w.write_record([e.id.as_str(), e.cohort.as_str(), e.reason.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(&ex, e))?;
        Ok(vec![cohort_path, baseline, followup, ex])
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let layout = FeatureLayout::canonical();
        let all = cohortgen::read_cohort_csv(open(&dir.join(COHORT_FILE))?)?;
        let (baseline, followup): (Vec<_>, Vec<_>) = all.into_iter().partition(|p| p.cohort == Cohort::Baseline);
        let features_baseline = featurize::read_features_csv(open(&dir.join(FEATURES_BASELINE_FILE))?, &layout)?;
        let features_followup = featurize::read_features_csv(open(&dir.join(FEATURES_FOLLOWUP_FILE))?, &layout)?;
        let mut excluded = Vec::new();
        let ex = dir.join(EXCLUSIONS_FILE);
        if ex.exists() {
            let mut r = csv::Reader::from_reader(open(&ex)?);
            for rec in r.records() {
                let rec = rec?;
                excluded.push(Exclusion { id: rec[0].to_string(), cohort: Cohort::parse(&rec[1])?, reason: rec[2].to_string() });
            }
        }
        Ok(Dataset { baseline, followup, features_baseline, features_followup, excluded })
    }

    /// Load the cache under `dir` if it was built from the same generation
    /// settings, otherwise build and write it.
    pub fn load_or_build(dir: &Path, cfg: &Config) -> Result<Self> {
        let stamp = generation_stamp(cfg);
        if dir.join(FEATURES_BASELINE_FILE).exists() {
            if fs::read_to_string(dir.join(STAMP_FILE)).ok().as_deref() == Some(stamp.as_str()) {
                info!("using cached features in {}", dir.display());
                return Self::load(dir);
            }
            info!("feature cache in {} is stale, rebuilding", dir.display());
        }
        Self::build_and_save(dir, cfg)
    }

    /// Rebuild unconditionally and write the cache with its stamp.
    pub fn build_and_save(dir: &Path, cfg: &Config) -> Result<Self> {
        let d = build_dataset(cfg)?;
        d.save(dir)?;
        let stamp_path = dir.join(STAMP_FILE);
        fs::write(&stamp_path, generation_stamp(cfg)).map_err(|e| Error::io(&stamp_path, e))?;
        Ok(d)
    }

    pub fn participant(&self, id: &str) -> Option<&Participant> {
        self.baseline.iter().find(|p| p.id == id)
    }
}

/// Baseline-only participants train, longitudinal participants test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn from_features(rows: &[FeatureVector], validation_fraction: f64, seed: u64) -> Result<Self> {
        let (test, train): (Vec<&FeatureVector>, Vec<&FeatureVector>) =
            rows.iter().partition(|r| r.label_future.is_some());
        let plan = SplitPlan {
            train_ids: train.iter().map(|r| r.participant_id.clone()).collect(),
            test_ids: test.iter().map(|r| r.participant_id.clone()).collect(),
            validation_fraction,
            seed,
        };
        plan.validate(rows)?;
        Ok(plan)
    }

    pub fn validate(&self, rows: &[FeatureVector]) -> Result<()> {
        let train: HashSet<&str> = self.train_ids.iter().map(String::as_str).collect();
        if self.test_ids.iter().any(|id| train.contains(id.as_str())) {
            return Err(Error::Data("train and test ids overlap".into()));
        }
        let test: HashSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        if rows.iter().any(|r| test.contains(r.participant_id.as_str()) && r.label_future.is_none()) {
            return Err(Error::Data("a test participant has no follow-up label".into()));
        }
        if self.train_ids.len() < 2 || self.test_ids.len() < 2 {
            return Err(Error::Data(format!(
                "split too small: {} train / {} test",
                self.train_ids.len(),
                self.test_ids.len()
            )));
        }
        Ok(())
    }
}

/// Shuffle ids with `seed` and hold out `round(test_fraction * n)` of them.
pub fn holdout_split(ids: &[String], test_fraction: f64, seed_value: u64) -> (Vec<String>, Vec<String>) {
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    shuffled.shuffle(&mut seed::rng(seed_value, "holdout", 0));
    let n_test = (test_fraction * ids.len() as f64).round() as usize;
    let test = shuffled[..n_test].to_vec();
    let train = shuffled[n_test..].to_vec();
    (train, test)
}

/// Rows of `rows` whose ids appear in `ids`, in the order of `ids`.
pub fn select<'a>(rows: &'a [FeatureVector], ids: &[String]) -> Result<Vec<&'a FeatureVector>> {
    let index: std::collections::HashMap<&str, &FeatureVector> =
        rows.iter().map(|r| (r.participant_id.as_str(), r)).collect();
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::Data(format!("no feature row for {id}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(id: &str, future: Option<f64>) -> FeatureVector {
        FeatureVector {
            participant_id: id.into(),
            layout_version: "x".into(),
            values: vec![],
            label_current: Some(40.0),
            label_future: future,
        }
    }

    #[test]
    fn longitudinal_rows_go_to_test() {
        let rows = vec![fv("a", None), fv("b", Some(39.0)), fv("c", None), fv("d", Some(41.0))];
        let plan = SplitPlan::from_features(&rows, 0.1, 1).unwrap();
        assert_eq!(plan.train_ids, vec!["a", "c"]);
        assert_eq!(plan.test_ids, vec!["b", "d"]);
    }

    #[test]
    fn holdout_proportions_and_determinism() {
        let ids: Vec<String> = (0..2675).map(|i| format!("P{i}")).collect();
        let (train, test) = holdout_split(&ids, 0.2, 9);
        assert_eq!((train.len(), test.len()), (2140, 535));
        assert_eq!(holdout_split(&ids, 0.2, 9), (train.clone(), test.clone()));
        let all: HashSet<&String> = train.iter().chain(&test).collect();
        assert_eq!(all.len(), ids.len());
    }

    #[test]
    fn select_preserves_requested_order() {
        let rows = vec![fv("a", None), fv("b", None)];
        let got = select(&rows, &["b".into(), "a".into()]).unwrap();
        assert_eq!(got[0].participant_id, "b");
        assert!(select(&rows, &["zz".into()]).is_err());
    }
}
