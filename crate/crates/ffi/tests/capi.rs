use std::ffi::{c_char, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vo2fit::featurize::{FeatureLayout, LAYOUT_VERSION};
use vo2fit::models::{self, BundleMetadata, Estimator, ModelBundle, ModelKind, TrainConfig};
use vo2fit::transform::FittedTransform;
use vo2fit_ffi::*;

fn random_rows(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let width = FeatureLayout::canonical().len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (0..width).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn small_dense_bundle(classifier: bool) -> ModelBundle {
    let rows = random_rows(120, 1);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let width = rows[0].len();
    let transform = FittedTransform::fit(&refs, LAYOUT_VERSION, &(0..width).collect::<Vec<_>>()).unwrap();
    let x = transform.apply(LAYOUT_VERSION, &refs).unwrap();
    let y: Vec<f64> = rows.iter().map(|r| if classifier { f64::from(r[0] > 0.0) } else { r[0] + r[1] }).collect();
    let cfg = TrainConfig { max_epochs: 3, hidden_units: 16, ..TrainConfig::default() };
    let kind = if classifier { ModelKind::Classifier } else { ModelKind::Regressor };
    let (net, history) = models::train_dense(&x, &y, &cfg, kind).unwrap();
    let meta = BundleMetadata {
        task: "test".into(),
        covariate_set: "comprehensive".into(),
        seed: 1,
        layout_version: LAYOUT_VERSION.into(),
        input_len: width,
        config: Some(cfg),
    };
    ModelBundle::new(meta, Some(transform), Estimator::Dense(net), Some(history)).unwrap()
}

fn last_error() -> String {
    let n = unsafe { vo2_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { vo2_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn load(path: &Path) -> (Vo2Status, *mut Vo2Bundle) {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { vo2_bundle_load(c.as_ptr(), &mut handle) };
    (status, handle)
}

#[test]
fn bundle_predictions_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.json");
    let bundle = small_dense_bundle(false);
    bundle.save(&path).unwrap();
    let (status, h) = load(&path);
    assert_eq!(status, Vo2Status::Ok);

    let mut width = 0usize;
    assert_eq!(unsafe { vo2_bundle_input_len(h, &mut width) }, Vo2Status::Ok);
    assert_eq!(width, 68);
    let mut latent = 0usize;
    assert_eq!(unsafe { vo2_bundle_latent_dim(h, &mut latent) }, Vo2Status::Ok);
    assert_eq!(latent, 16);

    let rows = random_rows(7, 2);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let mut out = vec![0.0; 7];
    assert_eq!(unsafe { vo2_bundle_predict(h, flat.as_ptr(), 7, width, out.as_mut_ptr()) }, Vo2Status::Ok);
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let expected = bundle.predict(LAYOUT_VERSION, &refs).unwrap();
    assert_eq!(out, expected);

    let mut acts = vec![0.0; 7 * latent];
    assert_eq!(unsafe { vo2_bundle_latent(h, flat.as_ptr(), 7, width, acts.as_mut_ptr()) }, Vo2Status::Ok);
    assert!(acts.iter().all(|v| v.is_finite()));

    assert_eq!(unsafe { vo2_bundle_predict(h, flat.as_ptr(), 1, 5, out.as_mut_ptr()) }, Vo2Status::LayoutMismatch);
    assert!(last_error().contains("68"));
    unsafe { vo2_bundle_free(h) };
}

#[test]
fn classifier_outputs_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    small_dense_bundle(true).save(&path).unwrap();
    let (status, h) = load(&path);
    assert_eq!(status, Vo2Status::Ok);
    let flat: Vec<f64> = random_rows(5, 3).into_iter().flatten().collect();
    let mut out = [0.0; 5];
    assert_eq!(unsafe { vo2_bundle_predict(h, flat.as_ptr(), 5, 68, out.as_mut_ptr()) }, Vo2Status::Ok);
    assert!(out.iter().all(|p| (0.0..=1.0).contains(p)));
    unsafe { vo2_bundle_free(h) };
}

#[test]
fn load_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (status, h) = load(&dir.path().join("missing.json"));
    assert_eq!(status, Vo2Status::Io);
    assert!(h.is_null());
    assert!(last_error().contains("missing.json"));

    let junk = dir.path().join("junk.json");
    std::fs::write(&junk, "{ not json").unwrap();
    assert_eq!(load(&junk).0, Vo2Status::Parse);

    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { vo2_bundle_load(ptr::null(), &mut handle) }, Vo2Status::NullPointer);
    unsafe { vo2_bundle_free(ptr::null_mut()) };
}

#[test]
fn equation_and_month_helpers() {
    let mut v = 0.0;
    assert_eq!(unsafe { vo2_equation_baseline(40.0, 60.0, &mut v) }, Vo2Status::Ok);
    assert_eq!(v, 45.0);
    assert_eq!(unsafe { vo2_equation_baseline(40.0, 0.0, &mut v) }, Vo2Status::InvalidArgument);

    let (mut s, mut c) = (0.0, 0.0);
    assert_eq!(unsafe { vo2_cyclical_month(3, &mut s, &mut c) }, Vo2Status::Ok);
    assert!((s * s + c * c - 1.0).abs() < 1e-12);
    assert_eq!(unsafe { vo2_cyclical_month(13, &mut s, &mut c) }, Vo2Status::InvalidArgument);
    assert_eq!(unsafe { vo2_cyclical_month(3, ptr::null_mut(), &mut c) }, Vo2Status::NullPointer);
}

#[test]
fn metrics_through_the_c_interface() {
    let labels = [0u8, 0, 1, 1];
    let scores = [0.1, 0.4, 0.35, 0.8];
    let mut auc = 0.0;
    assert_eq!(unsafe { vo2_auroc(labels.as_ptr(), scores.as_ptr(), 4, &mut auc) }, Vo2Status::Ok);
    assert_eq!(auc, 0.75);
    let same = [1u8; 3];
    assert_eq!(unsafe { vo2_auroc(same.as_ptr(), scores.as_ptr(), 3, &mut auc) }, Vo2Status::Metric);

    let t = [1.0, 2.0, 3.0, 4.0];
    let p = [1.0, 2.0, 3.0, 6.0];
    let mut m = Vo2RegressionMetrics::default();
    assert_eq!(unsafe { vo2_regression_metrics(t.as_ptr(), p.as_ptr(), 4, &mut m) }, Vo2Status::Ok);
    assert_eq!(m.mse, 1.0);
    assert_eq!(m.rmse, 1.0);
    assert_eq!(m.mae, 0.5);
    assert_eq!(m.r2, 1.0 - 4.0 / 5.0);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { std::ffi::CStr::from_ptr(vo2_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

const C_PROGRAM: &str = r#"#include <stdio.h>
#include <string.h>
#include "vo2fit.h"

int main(void) {
    double v = 0.0;
    if (vo2_equation_baseline(40.0, 60.0, &v) != VO2_STATUS_OK || v != 45.0) return 1;
    Vo2Bundle *b = NULL;
    if (vo2_bundle_load("/nonexistent/bundle.json", &b) != VO2_STATUS_IO || b != NULL) return 2;
    char msg[256];
    size_t n = vo2_last_error_message(msg, sizeof msg);
    if (n == 0 || strstr(msg, "bundle.json") == NULL) return 3;
    unsigned char labels[4] = {0, 0, 1, 1};
    double scores[4] = {0.1, 0.4, 0.35, 0.8};
    double auc = 0.0;
    if (vo2_auroc(labels, scores, 4, &auc) != VO2_STATUS_OK || auc != 0.75) return 4;
    printf("%s\n", vo2_version());
    return 0;
}
"#;

/// Compile a C program against the generated header, link it to the shared
/// library cargo built next to this test, and run it.
#[test]
fn c_program_links_and_runs() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().and_then(Path::parent).unwrap().to_path_buf();
    assert!(lib_dir.join("libvo2fit_ffi.so").exists() || lib_dir.join("libvo2fit_ffi.dylib").exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    let bin = dir.path().join("check");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&header_dir)
        .arg(&src)
        .arg("-o")
        .arg(&bin)
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lvo2fit_ffi")
        .status()
        .expect("a C compiler is available");
    assert!(status.success(), "C compile/link failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));

    let cpp = dir.path().join("check.cpp");
    std::fs::write(&cpp, C_PROGRAM).unwrap();
    let status = Command::new("c++").args(["-fsyntax-only", "-Wall", "-Werror", "-I"]).arg(&header_dir).arg(&cpp).status().unwrap();
    assert!(status.success(), "header is not valid C++");
}
