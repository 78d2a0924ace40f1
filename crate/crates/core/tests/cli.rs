use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 5

[population]
n_baseline_only = 200
n_longitudinal = 200

[train]
max_epochs = 3
hidden_units = 16

[evaluation]
n_resamples = 20
permutations = 50
"#;

fn vo2fit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vo2fit")).args(args).output().expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

fn run_ok(config: &Path, out: &Path, rest: &[&str]) -> String {
    let mut args = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(rest);
    let o = vo2fit(&args);
    assert!(o.status.success(), "{rest:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = vo2fit(&["task1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--config"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = vo2fit(&["--config", cfg.to_str().unwrap(), "task1", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_one_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[train]\nvalidation_fraction = 1.5\n").unwrap();
    let o = vo2fit(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "task1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error:") && err.contains("validation_fraction"), "{err}");

    let o = vo2fit(&["--config", dir.path().join("absent.toml").to_str().unwrap(), "task1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn task2_before_task1_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("out");
    let o = vo2fit(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "task2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run task1 first"));
}

#[test]
fn task1_twice_with_the_same_seed_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&cfg, &a, &["--seed", "7", "task1"]);
    run_ok(&cfg, &b, &["task1", "--seed", "7"]);
    let ma = fs::read_to_string(a.join("manifest.json")).unwrap();
    let mb = fs::read_to_string(b.join("manifest.json")).unwrap();
    assert_eq!(ma, mb);
    let m: serde_json::Value = serde_json::from_str(&ma).unwrap();
    assert_eq!(m["seed"], 7);
    assert!(m["files"]["task1/bundle_comprehensive_dense.json"].is_string());

    let c = dir.path().join("c");
    run_ok(&cfg, &c, &["--seed", "8", "task1"]);
    assert_ne!(fs::read_to_string(c.join("manifest.json")).unwrap(), ma);
}

#[test]
fn full_run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let t1 = run_ok(&cfg, &out, &["task1"]);
    assert!(t1.contains("comprehensive_dense"));
    run_ok(&cfg, &out, &["task2"]);
    let t3 = run_ok(&cfg, &out, &["task3"]);
    assert!(t3.contains("reproduces task 1: true"), "{t3}");
    run_ok(&cfg, &out, &["latent"]);
    let rep = run_ok(&cfg, &out, &["report"]);
    for table in ["table1.csv", "table2.csv", "table3.csv", "task3.csv"] {
        assert!(rep.contains(table));
    }

    let mut rdr = csv::Reader::from_path(out.join("tables/table1.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    for col in ["model", "r2", "r2_lower", "r2_upper", "pearson", "rmse"] {
        assert!(header.iter().any(|h| h == col), "table1 lacks {col}");
    }
    let models: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(
        models,
        ["anthro_linear", "rhr_linear", "anthro_rhr_linear", "comprehensive_linear", "comprehensive_dense", "equation"]
    );
    let t2 = fs::read_to_string(out.join("tables/table2.csv")).unwrap();
    for row in ["current", "future", "delta", "delta_50/50", "delta_80/20", "delta_90/10"] {
        assert!(t2.lines().any(|l| l.starts_with(&format!("{row},"))), "table2 lacks {row}");
    }
    for plot in ["task2/roc_5050.csv", "task1/bland_altman_equation.csv", "task1/scatter_comprehensive_dense.csv", "latent/embedding_latent.csv"] {
        assert!(out.join(plot).exists(), "{plot} missing");
    }

    // the manifest covers every file on disk
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let files = m["files"].as_object().unwrap();
    assert!(files.contains_key("tables/table2.csv"));
    assert!(files.contains_key("task3/report.json"));
    assert_eq!(m["layout_version"], "fv68-v1");
}

#[test]
fn file_based_stages_and_single_model_training() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    run_ok(&cfg, &out, &["generate", "--max-weeks", "3"]);
    assert_eq!(fs::read_dir(out.join("data/sensor")).unwrap().count(), 3);
    run_ok(&cfg, &out, &["preprocess"]);
    assert_eq!(fs::read_dir(out.join("data/clean")).unwrap().count(), 3);
    run_ok(&cfg, &out, &["featurize"]);

    // features computed from the files on disk equal the in-memory pipeline
    let clean = fs::read_to_string(out.join("data/features_clean.csv")).unwrap();
    let all = fs::read_to_string(out.join("data/features_baseline.csv")).unwrap();
    for line in clean.lines().skip(1) {
        assert!(all.lines().any(|l| l == line), "file-based features differ: {}", &line[..20]);
    }

    let saved = run_ok(&cfg, &out, &["train", "--covariates", "anthro_rhr", "--model", "linear"]);
    assert!(saved.contains("bundle_anthro_rhr_linear.json"));
    let bundle = out.join("models/bundle_anthro_rhr_linear.json");
    let eval = run_ok(&cfg, &out, &["evaluate", "--bundle", bundle.to_str().unwrap()]);
    assert!(eval.contains("r2"));
    assert!(out.join("evaluations/anthro_rhr_linear.json").exists());

    let o = vo2fit(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "train",
        "--covariates",
        "sensors_only",
    ]);
    assert_eq!(o.status.code(), Some(1));
}
