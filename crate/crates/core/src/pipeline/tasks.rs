//! The three experiments: cross-sectional model comparison, prediction of
//! future fitness and its change, and re-use of the frozen baseline model on
//! follow-up data.

use std::collections::BTreeMap;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{Config, CovariateSet, ModelChoice, RowSpec};
use super::data::{holdout_split, select, Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::evalmetrics::{
    self, BlandAltman, DeltaBins, DeltaScheme, DeltaThresholds, EvalReport, GroupReport, Grouping, Metric, RocPoint,
};
use crate::featurize::{FeatureLayout, FeatureVector, LAYOUT_VERSION};
use crate::latentspace::{self, CaseStudy, Embedding};
use crate::models::{self, BundleMetadata, EquationModel, Estimator, ModelBundle, ModelKind};
use crate::seed;
use crate::transform::FittedTransform;

/// Label a model is trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Current,
    Future,
    /// Current minus future; positive means fitness declined.
    Delta,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Current => "current",
            Target::Future => "future",
            Target::Delta => "delta",
        }
    }

    pub fn value(self, fv: &FeatureVector) -> Result<f64> {
        let missing = || Error::Data(format!("{}: no {} label", fv.participant_id, self.as_str()));
        let current = fv.label_current.ok_or_else(missing)?;
        match self {
            Target::Current => Ok(current),
            Target::Future => fv.label_future.ok_or_else(missing),
            Target::Delta => Ok(current - fv.label_future.ok_or_else(missing)?),
        }
    }

    fn values(self, rows: &[&FeatureVector]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.value(r)).collect()
    }
}

fn raw<'a>(rows: &[&'a FeatureVector]) -> Vec<&'a [f64]> {
    rows.iter().map(|r| r.values.as_slice()).collect()
}

fn ids(rows: &[&FeatureVector]) -> Vec<String> {
    rows.iter().map(|r| r.participant_id.clone()).collect()
}

/// Scaler + PCA for one covariate set, fitted on training rows only.
pub fn fit_transform(train: &[&FeatureVector], covariates: CovariateSet) -> Result<FittedTransform> {
    let layout = FeatureLayout::canonical();
    FittedTransform::fit(&raw(train), LAYOUT_VERSION, &covariates.indices(&layout)?)
}

fn metadata(task: &str, covariates: &str, cfg: &Config, train_cfg: Option<models::TrainConfig>) -> BundleMetadata {
    BundleMetadata {
        task: task.into(),
        covariate_set: covariates.into(),
        seed: cfg.seed,
        layout_version: LAYOUT_VERSION.into(),
        input_len: FeatureLayout::canonical().len(),
        config: train_cfg,
    }
}

/// Fit one estimator on training rows only.
pub fn fit_model(
    task: &str,
    row: RowSpec,
    transform: Option<&FittedTransform>,
    train: &[&FeatureVector],
    y: &[f64],
    kind: ModelKind,
    cfg: &Config,
) -> Result<ModelBundle> {
    let name = format!("{task}:{}", row.name());
    match row.model {
        ModelChoice::Equation => ModelBundle::new(
            metadata(task, "age_rhr", cfg, None),
            None,
            Estimator::Equation(EquationModel::for_layout(&FeatureLayout::canonical())?),
            None,
        ),
        ModelChoice::Linear | ModelChoice::Dense => {
            let t = transform.ok_or_else(|| Error::Config(format!("{name} needs a fitted transform")))?;
            let x = t.apply(LAYOUT_VERSION, &raw(train))?;
            if row.model == ModelChoice::Linear {
                info!("{name}: fitting OLS on {} rows x {} components", x.len(), t.k);
                let lin = models::fit_linear(&x, y)?;
                ModelBundle::new(metadata(task, row.covariates.as_str(), cfg, None), Some(t.clone()), Estimator::Linear(lin), None)
            } else {
                let tc = cfg.train_for(&name);
                info!("{name}: training dense {:?} on {} rows x {} components", kind, x.len(), t.k);
                let (trained, history) = models::train_dense(&x, y, &tc, kind)?;
                ModelBundle::new(
                    metadata(task, row.covariates.as_str(), cfg, Some(tc)),
                    Some(t.clone()),
                    Estimator::Dense(trained),
                    Some(history),
                )
            }
        }
    }
}

/// Bland–Altman limits without the per-point data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub mean_diff: f64,
    pub lower_loa: f64,
    pub upper_loa: f64,
}

impl From<&BlandAltman> for AgreementSummary {
    fn from(b: &BlandAltman) -> Self {
        AgreementSummary { mean_diff: b.mean_diff, lower_loa: b.lower_loa, upper_loa: b.upper_loa }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub covariates: CovariateSet,
    pub model: ModelChoice,
    /// PCA output width (0 for the equation).
    pub n_components: usize,
    pub report: EvalReport,
    pub agreement: AgreementSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task1Report {
    pub seed: u64,
    pub layout_version: String,
    pub n_train: usize,
    pub n_test: usize,
    pub n_excluded: usize,
    pub rows: Vec<ComparisonRow>,
    /// Breakdown of the comprehensive dense model, when it was trained.
    pub subgroups: Vec<GroupReport>,
}

impl Task1Report {
    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

pub struct FittedRow {
    pub name: String,
    pub bundle: ModelBundle,
    pub predictions: Vec<f64>,
    pub agreement: BlandAltman,
}

pub struct Task1Outcome {
    pub plan: SplitPlan,
    pub report: Task1Report,
    pub fitted: Vec<FittedRow>,
    pub test_truth: Vec<f64>,
}

pub const COMPREHENSIVE_DENSE: &str = "comprehensive_dense";

/// Evaluate a bundle on the task-1 test rows with the same bootstrap stream
/// task 1 used for that row.
pub fn evaluate_task1_row(
    name: &str,
    bundle: &ModelBundle,
    test: &[&FeatureVector],
    n_train: usize,
    cfg: &Config,
) -> Result<(EvalReport, Vec<f64>)> {
    let y = Target::Current.values(test)?;
    let pred = bundle.predict(LAYOUT_VERSION, &raw(test))?;
    let report = evalmetrics::evaluate_regression(&y, &pred, n_train, &cfg.bootstrap(&format!("task1:{name}")))?;
    Ok((report, pred))
}

pub fn run_task1(ds: &Dataset, cfg: &Config) -> Result<Task1Outcome> {
    let plan = SplitPlan::from_features(&ds.features_baseline, cfg.train.validation_fraction, cfg.split_seed())?;
    let train = select(&ds.features_baseline, &plan.train_ids)?;
    let test = select(&ds.features_baseline, &plan.test_ids)?;
    let y_train = Target::Current.values(&train)?;
    let y_test = Target::Current.values(&test)?;
    info!("task 1: {} train / {} test", train.len(), test.len());

    let mut transforms: BTreeMap<CovariateSet, FittedTransform> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut fitted = Vec::new();
    for spec in &cfg.task1.rows {
        let name = spec.name();
        let transform = if spec.model == ModelChoice::Equation {
            None
        } else {
            if let std::collections::btree_map::Entry::Vacant(e) = transforms.entry(spec.covariates) {
                e.insert(fit_transform(&train, spec.covariates)?);
            }
            transforms.get(&spec.covariates)
        };
        let bundle = fit_model("task1", *spec, transform, &train, &y_train, ModelKind::Regressor, cfg)?;
        let (report, pred) = evaluate_task1_row(&name, &bundle, &test, train.len(), cfg)?;
        let agreement = evalmetrics::bland_altman(&y_test, &pred)?;
        info!("task 1 {name}: r2 {:.3}", report.get(Metric::R2).map_or(f64::NAN, |e| e.point));
        rows.push(ComparisonRow {
            name: name.clone(),
            covariates: spec.covariates,
            model: spec.model,
            n_components: transform.map_or(0, |t| t.k),
            agreement: AgreementSummary::from(&agreement),
            report,
        });
        fitted.push(FittedRow { name, bundle, predictions: pred, agreement });
    }

    let mut subgroups = Vec::new();
    if let Some(dense) = fitted.iter().find(|f| f.name == COMPREHENSIVE_DENSE) {
        let people = plan
            .test_ids
            .iter()
            .map(|id| ds.participant(id).cloned().ok_or_else(|| Error::Data(format!("no participant record for {id}"))))
            .collect::<Result<Vec<_>>>()?;
        for g in Grouping::ALL {
            let bs = cfg.bootstrap(&format!("task1:subgroup:{}", g.as_str()));
            subgroups.extend(evalmetrics::subgroup_report(&people, &y_test, &dense.predictions, g, &bs)?);
        }
    }

    let report = Task1Report {
        seed: cfg.seed,
        layout_version: LAYOUT_VERSION.into(),
        n_train: train.len(),
        n_test: test.len(),
        n_excluded: ds.excluded.len(),
        rows,
        subgroups,
    };
    Ok(Task1Outcome { plan, report, fitted, test_truth: y_test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub target: Target,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub scheme: DeltaScheme,
    pub thresholds: DeltaThresholds,
    pub n_train_retained: usize,
    pub n_test_retained: usize,
    pub report: EvalReport,
}

impl SchemeRow {
    pub fn auc(&self) -> Option<evalmetrics::Estimate> {
        self.report.get(Metric::Auroc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task2Report {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub regression: Vec<OutcomeRow>,
    pub classification: Vec<SchemeRow>,
}

pub struct Task2Outcome {
    pub report: Task2Report,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Bundle name (e.g. `future_dense`, `delta_8020_dense`) to bundle.
    pub bundles: Vec<(String, ModelBundle)>,
    pub roc: Vec<(DeltaScheme, Vec<RocPoint>)>,
    pub predictions: Vec<(Target, Vec<f64>)>,
    pub truth: Vec<(Target, Vec<f64>)>,
}

/// Split the longitudinal participants, retrain dense models for current,
/// future and delta outcomes, and train classifiers on binned deltas. Every
/// model reuses `transform`, which was fitted on task-1 training data.
pub fn run_task2(ds: &Dataset, transform: &FittedTransform, cfg: &Config) -> Result<Task2Outcome> {
    let pool: Vec<String> = ds
        .features_baseline
        .iter()
        .filter(|r| r.label_future.is_some())
        .map(|r| r.participant_id.clone())
        .collect();
    let (train_ids, test_ids) = holdout_split(&pool, cfg.task2.test_fraction, cfg.split_seed());
    let train = select(&ds.features_baseline, &train_ids)?;
    let test = select(&ds.features_baseline, &test_ids)?;
    info!("task 2: {} train+val / {} test", train.len(), test.len());
    let dense = RowSpec { covariates: CovariateSet::Comprehensive, model: ModelChoice::Dense };

    let mut regression = Vec::new();
    let mut bundles = Vec::new();
    let mut predictions = Vec::new();
    let mut truth_by_target = Vec::new();
    for target in [Target::Current, Target::Future, Target::Delta] {
        let y = target.values(&train)?;
        let name = format!("{}_dense", target.as_str());
        let bundle = fit_model(&format!("task2:{}", target.as_str()), dense, Some(transform), &train, &y, ModelKind::Regressor, cfg)?;
        let truth = target.values(&test)?;
        let pred = bundle.predict(LAYOUT_VERSION, &raw(&test))?;
        let report = evalmetrics::evaluate_regression(&truth, &pred, train.len(), &cfg.bootstrap(&format!("task2:{name}")))?;
        regression.push(OutcomeRow { target, report });
        predictions.push((target, pred));
        truth_by_target.push((target, truth));
        bundles.push((name, bundle));
    }

    let train_delta = Target::Delta.values(&train)?;
    let test_delta = Target::Delta.values(&test)?;
    let mut classification = Vec::new();
    let mut roc = Vec::new();
    for &scheme in &cfg.task2.schemes {
        let thresholds = DeltaThresholds::fit(&train_delta, scheme)?;
        let train_bins = DeltaBins::from_assignment(thresholds, &train_delta);
        let test_bins = DeltaBins::from_assignment(thresholds, &test_delta);
        let sub_train: Vec<&FeatureVector> = train_bins.retained.iter().map(|&i| train[i]).collect();
        let sub_test: Vec<&FeatureVector> = test_bins.retained.iter().map(|&i| test[i]).collect();
        let y: Vec<f64> = train_bins.labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        let name = format!("delta_{}_dense", scheme.slug());
        let bundle = fit_model(&format!("task2:{name}"), dense, Some(transform), &sub_train, &y, ModelKind::Classifier, cfg)?;
        let n_pos = test_bins.labels.iter().filter(|&&l| l).count();
        if n_pos < 2 || test_bins.labels.len() - n_pos < 2 {
            return Err(Error::Data(format!(
                "scheme {} leaves too few test rows per class ({} of {})",
                scheme.as_str(),
                n_pos,
                test_bins.labels.len()
            )));
        }
        let scores = bundle.predict(LAYOUT_VERSION, &raw(&sub_test))?;
        let report =
            evalmetrics::evaluate_classifier(&test_bins.labels, &scores, sub_train.len(), &cfg.bootstrap(&format!("task2:{name}")))?;
        info!("task 2 {}: auc {:.3}", scheme.as_str(), report.get(Metric::Auroc).map_or(f64::NAN, |e| e.point));
        roc.push((scheme, evalmetrics::roc_curve(&test_bins.labels, &scores)?));
        classification.push(SchemeRow {
            scheme,
            thresholds,
            n_train_retained: sub_train.len(),
            n_test_retained: sub_test.len(),
            report,
        });
        bundles.push((name, bundle));
    }

    Ok(Task2Outcome {
        report: Task2Report { seed: cfg.seed, n_train: train.len(), n_test: test.len(), regression, classification },
        train_ids,
        test_ids,
        bundles,
        roc,
        predictions,
        truth: truth_by_target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task3Report {
    pub seed: u64,
    /// Participants with both baseline and follow-up feature vectors.
    pub n_matched: usize,
    pub n_excluded: usize,
    /// Frozen model on follow-up features against follow-up truth.
    pub followup: EvalReport,
    /// Correlation of follow-up predictions with baseline truth.
    pub corr_followup_pred_vs_baseline_truth: f64,
    /// Correlation of predicted change with true change (both current minus future).
    pub delta_correlation: f64,
    pub delta_pvalue: f64,
    /// Whether re-predicting the task-1 test rows reproduced the task-1 report.
    pub reproduces_task1: Option<bool>,
    /// Hash of the frozen bundle file before and after the run.
    pub bundle_sha256_before: Option<String>,
    pub bundle_sha256_after: Option<String>,
}

pub struct Task3Outcome {
    pub report: Task3Report,
    pub ids: Vec<String>,
    pub pred_baseline: Vec<f64>,
    pub pred_followup: Vec<f64>,
    pub true_baseline: Vec<f64>,
    pub true_followup: Vec<f64>,
}

/// Feed follow-up feature vectors through the frozen task-1 bundle. No
/// fitting happens here.
pub fn run_task3(ds: &Dataset, bundle: &ModelBundle, cfg: &Config) -> Result<Task3Outcome> {
    let followup: BTreeMap<&str, &FeatureVector> =
        ds.features_followup.iter().map(|r| (r.participant_id.as_str(), r)).collect();
    let mut base = Vec::new();
    let mut fut = Vec::new();
    let mut missing = 0;
    for r in ds.features_baseline.iter().filter(|r| r.label_future.is_some()) {
        match followup.get(r.participant_id.as_str()) {
            Some(f) => {
                base.push(r);
                fut.push(*f);
            }
            None => missing += 1,
        }
    }
    if missing > 0 {
        warn!("task 3: {missing} longitudinal participants lack an eligible follow-up week");
    }
    let pred_baseline = bundle.predict(LAYOUT_VERSION, &raw(&base))?;
    let pred_followup = bundle.predict(LAYOUT_VERSION, &raw(&fut))?;
    let true_baseline = Target::Current.values(&base)?;
    let true_followup = Target::Future.values(&base)?;
    let followup_report =
        evalmetrics::evaluate_regression(&true_followup, &pred_followup, 0, &cfg.bootstrap("task3:followup"))?;
    let pred_delta: Vec<f64> = pred_baseline.iter().zip(&pred_followup).map(|(a, b)| a - b).collect();
    let true_delta: Vec<f64> = true_baseline.iter().zip(&true_followup).map(|(a, b)| a - b).collect();
    let delta_correlation = evalmetrics::pearson(&pred_delta, &true_delta)?;
    let delta_pvalue = evalmetrics::permutation_pvalue(
        &pred_delta,
        &true_delta,
        cfg.evaluation.permutations,
        seed::derive(cfg.seed, "task3:permutation", 0),
    )?;
    info!("task 3: {} matched, delta r = {delta_correlation:.3} (p = {delta_pvalue:.4})", base.len());
    let report = Task3Report {
        seed: cfg.seed,
        n_matched: base.len(),
        n_excluded: missing,
        corr_followup_pred_vs_baseline_truth: evalmetrics::pearson(&pred_followup, &true_baseline)?,
        followup: followup_report,
        delta_correlation,
        delta_pvalue,
        reproduces_task1: None,
        bundle_sha256_before: None,
        bundle_sha256_after: None,
    };
    Ok(Task3Outcome { report, ids: ids(&base), pred_baseline, pred_followup, true_baseline, true_followup })
}

pub struct LatentOutcome {
    pub original: Embedding,
    pub latent: Embedding,
    pub studies: Vec<CaseStudy>,
}

/// Embed the task-1 test rows in both spaces and run the neighbour case
/// study on randomly drawn queries.
pub fn run_latent(ds: &Dataset, bundle: &ModelBundle, cfg: &Config) -> Result<LatentOutcome> {
    let test: Vec<&FeatureVector> = ds.features_baseline.iter().filter(|r| r.label_future.is_some()).collect();
    let test_ids = ids(&test);
    let latent = latentspace::extract_latent(bundle, &test_ids, LAYOUT_VERSION, &raw(&test))?;
    let original = latentspace::project_original(bundle, &test_ids, LAYOUT_VERSION, &raw(&test))?;
    let mut queries = test_ids.clone();
    queries.shuffle(&mut seed::rng(cfg.seed, "case-study", 0));
    queries.truncate(cfg.evaluation.case_study_queries);
    let studies = latentspace::subtype_case_study(&original, &latent, &ds.baseline, &queries, cfg.evaluation.k_neighbours)?;
    Ok(LatentOutcome { original, latent, studies })
}
