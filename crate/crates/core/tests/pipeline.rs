use std::fs;

use vo2fit::pipeline::{self, data, run_task1, Config, Dataset};
use vo2fit::Error;

const SMALL: &str = r#"
seed = 11

[population]
n_baseline_only = 160
n_longitudinal = 80

[evaluation]
n_resamples = 20
permutations = 20

[task1]
rows = [
    { covariates = "anthro_rhr", model = "linear" },
    { covariates = "comprehensive", model = "linear" },
    { covariates = "anthro", model = "equation" },
]
"#;

fn small() -> Config {
    Config::from_toml(SMALL).unwrap()
}

#[test]
fn config_rejects_bad_input() {
    let bad = |s: &str| Config::from_toml(s).unwrap_err();
    assert!(matches!(bad("[task1]\nrows = []\n"), Error::Config(_)));
    assert!(matches!(bad("[task2]\ntest_fraction = 0.0\n"), Error::Config(_)));
    assert!(matches!(bad("[evaluation]\nlevel = 1.0\n"), Error::Config(_)));
    assert!(bad("[train]\nlearningrate = 0.1\n").to_string().contains("learningrate"));
    assert!(Config::from_toml("[task1]\nrows = [{ covariates = \"all\", model = \"linear\" }]\n").is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let c = small();
    assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    let mut d = c.clone();
    d.reseed(12);
    assert_ne!(d.train_for("x").seed, c.train_for("x").seed);
    assert_eq!(d.train_for("x").seed, d.train_for("x").seed);
}

#[test]
fn same_seed_same_report() {
    let cfg = small();
    let a = run_task1(&data::build_dataset(&cfg).unwrap(), &cfg).unwrap();
    let b = run_task1(&data::build_dataset(&cfg).unwrap(), &cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.plan, b.plan);

    let mut other = cfg.clone();
    other.reseed(99);
    let c = run_task1(&data::build_dataset(&other).unwrap(), &other).unwrap();
    assert_ne!(a.report.rows[0].report, c.report.rows[0].report);
}

#[test]
fn task1_split_keeps_cohorts_apart() {
    let cfg = small();
    let ds = data::build_dataset(&cfg).unwrap();
    let o = run_task1(&ds, &cfg).unwrap();
    let longitudinal = |id: &String| ds.followup.iter().any(|p| &p.id == id);
    assert!(o.plan.train_ids.iter().all(|id| !longitudinal(id)));
    assert!(o.plan.test_ids.iter().all(longitudinal));
    assert_eq!(o.report.n_train + o.report.n_test + o.report.n_excluded, 240 - ds.excluded.len() + o.report.n_excluded);
    let names: Vec<&str> = o.report.rows.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["anthro_rhr_linear", "comprehensive_linear", "equation"]);
}

#[test]
fn feature_cache_is_reused_only_for_matching_settings() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let built = Dataset::load_or_build(dir.path(), &cfg).unwrap();
    let stamp = fs::read_to_string(dir.path().join(data::STAMP_FILE)).unwrap();
    let cached = Dataset::load_or_build(dir.path(), &cfg).unwrap();
    assert_eq!(cached.features_baseline, built.features_baseline);
    assert_eq!(cached.features_followup, built.features_followup);
    assert_eq!(cached.excluded, built.excluded);

    // a training-only change keeps the cache
    let mut tweaked = cfg.clone();
    tweaked.train.max_epochs = 2;
    Dataset::load_or_build(dir.path(), &tweaked).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join(data::STAMP_FILE)).unwrap(), stamp);

    let mut reseeded = cfg.clone();
    reseeded.reseed(3);
    let rebuilt = Dataset::load_or_build(dir.path(), &reseeded).unwrap();
    assert_ne!(rebuilt.features_baseline, built.features_baseline);
    assert_ne!(fs::read_to_string(dir.path().join(data::STAMP_FILE)).unwrap(), stamp);
}

#[test]
fn later_tasks_need_the_frozen_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    assert!(pipeline::run_task2_in(dir.path(), &cfg).is_err());
    assert!(pipeline::run_task3_in(dir.path(), &cfg).is_err());
    assert!(pipeline::run_latent_in(dir.path(), &cfg).is_err());
}

#[test]
fn shipped_profiles_parse() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let desk = Config::load(format!("{root}/desk.toml").as_ref()).unwrap();
    let full = Config::load(format!("{root}/full.toml").as_ref()).unwrap();
    assert_eq!((desk.population.n_baseline_only, desk.population.n_longitudinal), (3000, 600));
    assert_eq!((full.population.n_baseline_only, full.population.n_longitudinal), (8384, 2675));
    assert_eq!(desk.seed, full.seed);
}
