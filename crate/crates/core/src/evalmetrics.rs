//! Regression and ranking metrics, percentile bootstrap intervals,
//! Bland–Altman agreement, subgroup breakdowns and delta binning.

use std::collections::BTreeMap;
use std::io::Write;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohortgen::{Participant, Sex};
use crate::error::{Error, Result};
use crate::seed;

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(Error::Metric(format!("need at least 2 samples, got {}", y_true.len())));
    }
    if y_true.iter().chain(y_pred).any(|v| !v.is_finite()) {
        return Err(Error::Metric("non-finite values".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population standard deviation.
fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    Ok(y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum::<f64>() / y_true.len() as f64)
}

pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    mse(y_true, y_pred).map(f64::sqrt)
}

pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    Ok(y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum::<f64>() / y_true.len() as f64)
}

/// Population standard deviation of the absolute errors.
pub fn std_mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let abs: Vec<f64> = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).collect();
    Ok(pop_std(&abs))
}

/// Mean absolute percentage error as a fraction (0.05 = 5%).
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    if y_true.contains(&0.0) {
        return Err(Error::Metric("mape undefined when a true value is 0".into()));
    }
    Ok(y_true.iter().zip(y_pred).map(|(t, p)| ((t - p) / t).abs()).sum::<f64>() / y_true.len() as f64)
}

/// `1 - SS_res / SS_tot`, with `SS_tot` about the mean of the true values.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let m = mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|t| (t - m).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Metric("r2 undefined for constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Metric("correlation undefined for a constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub rmse: f64,
    pub r2: f64,
    /// Absent when either series is constant.
    pub pearson: Option<f64>,
    pub mse: f64,
    pub mae: f64,
    pub std_mae: f64,
    /// Absent when a true value is zero.
    pub mape: Option<f64>,
}

pub fn regression_metrics(y_true: &[f64], y_pred: &[f64]) -> Result<RegressionMetrics> {
    Ok(RegressionMetrics {
        rmse: rmse(y_true, y_pred)?,
        r2: r2(y_true, y_pred)?,
        pearson: pearson(y_true, y_pred).ok(),
        mse: mse(y_true, y_pred)?,
        mae: mae(y_true, y_pred)?,
        std_mae: std_mae(y_true, y_pred)?,
        mape: mape(y_true, y_pred).ok(),
    })
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half. Computed from mid-ranks.
pub fn auroc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::Metric(format!("length mismatch: {} vs {}", labels.len(), scores.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric("auroc needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC curve points from the highest threshold down, starting at (0, 0).
pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<RocPoint>> {
    auroc(labels, scores)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp / n_neg, tpr: tp / n_pos, threshold: t });
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Rmse,
    R2,
    Pearson,
    Mse,
    Mae,
    StdMae,
    Mape,
    /// Expects 0/1 labels as the "true" values and scores as predictions.
    Auroc,
}

impl Metric {
    pub const REGRESSION: [Metric; 7] =
        [Metric::Rmse, Metric::R2, Metric::Pearson, Metric::Mse, Metric::Mae, Metric::StdMae, Metric::Mape];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::R2 => "r2",
            Metric::Pearson => "pearson",
            Metric::Mse => "mse",
            Metric::Mae => "mae",
            Metric::StdMae => "std_mae",
            Metric::Mape => "mape",
            Metric::Auroc => "auroc",
        }
    }

    pub fn compute(self, y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
        match self {
            Metric::Rmse => rmse(y_true, y_pred),
            Metric::R2 => r2(y_true, y_pred),
            Metric::Pearson => pearson(y_true, y_pred),
            Metric::Mse => mse(y_true, y_pred),
            Metric::Mae => mae(y_true, y_pred),
            Metric::StdMae => std_mae(y_true, y_pred),
            Metric::Mape => mape(y_true, y_pred),
            Metric::Auroc => {
                let labels: Vec<bool> = y_true.iter().map(|&v| v != 0.0).collect();
                auroc(&labels, y_pred)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { n_resamples: 500, level: 0.95, seed: 42 }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const MAX_REDRAWS: usize = 1000;

/// Percentile intervals for several metrics from one shared set of paired
/// resamples. A resample on which any metric is undefined is redrawn.
pub fn bootstrap_many(metrics: &[Metric], y_true: &[f64], y_pred: &[f64], cfg: &BootstrapConfig) -> Result<Vec<Interval>> {
    for m in metrics {
        m.compute(y_true, y_pred)?;
    }
    if cfg.n_resamples == 0 || !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config("bootstrap needs resamples and a level in (0, 1)".into()));
    }
    let n = y_true.len();
    let draws: Vec<Vec<f64>> = (0..cfg.n_resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(cfg.seed, "bootstrap", i as u64);
            let mut t = vec![0.0; n];
            let mut p = vec![0.0; n];
            for attempt in 0..MAX_REDRAWS {
                for k in 0..n {
                    let j = rng.random_range(0..n);
                    t[k] = y_true[j];
                    p[k] = y_pred[j];
                }
                if let Ok(values) = metrics.iter().map(|m| m.compute(&t, &p)).collect::<Result<Vec<_>>>() {
                    if attempt > 0 {
                        debug!("bootstrap resample {i} redrawn {attempt} times");
                    }
                    return Ok(values);
                }
            }
            Err(Error::Metric(format!("bootstrap resample {i} stayed undefined after {MAX_REDRAWS} draws")))
        })
        .collect::<Result<_>>()?;
    let alpha = (1.0 - cfg.level) / 2.0;
    Ok((0..metrics.len())
        .map(|m| {
            let mut v: Vec<f64> = draws.iter().map(|d| d[m]).collect();
            v.sort_by(f64::total_cmp);
            Interval { lower: quantile_sorted(&v, alpha), upper: quantile_sorted(&v, 1.0 - alpha) }
        })
        .collect())
}

pub fn bootstrap_ci(metric: Metric, y_true: &[f64], y_pred: &[f64], cfg: &BootstrapConfig) -> Result<Interval> {
    Ok(bootstrap_many(&[metric], y_true, y_pred, cfg)?[0])
}

/// Point estimates with percentile intervals. An interval that misses its
/// point estimate is widened to include it so reports always satisfy
/// `lower <= point <= upper`.
pub fn estimate_all(metrics: &[Metric], y_true: &[f64], y_pred: &[f64], cfg: &BootstrapConfig) -> Result<BTreeMap<Metric, Estimate>> {
    let intervals = bootstrap_many(metrics, y_true, y_pred, cfg)?;
    metrics
        .iter()
        .zip(intervals)
        .map(|(&m, ci)| {
            let point = m.compute(y_true, y_pred)?;
            if point < ci.lower || point > ci.upper {
                warn!("{} point estimate {point} outside its bootstrap interval; widening", m.as_str());
            }
            Ok((m, Estimate { point, lower: ci.lower.min(point), upper: ci.upper.max(point) }))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub metrics: BTreeMap<Metric, Estimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subgroups: Vec<GroupReport>,
}

impl EvalReport {
    pub fn get(&self, m: Metric) -> Option<Estimate> {
        self.metrics.get(&m).copied()
    }
}

/// All regression metrics (MAPE and correlation only when defined) with bootstrap intervals.
pub fn evaluate_regression(y_true: &[f64], y_pred: &[f64], n_train: usize, cfg: &BootstrapConfig) -> Result<EvalReport> {
    let metrics: Vec<Metric> = Metric::REGRESSION
        .into_iter()
        .filter(|&m| match m {
            Metric::Mape | Metric::Pearson => m.compute(y_true, y_pred).is_ok(),
            _ => true,
        })
        .collect();
    Ok(EvalReport {
        n_train,
        n_test: y_true.len(),
        seed: cfg.seed,
        metrics: estimate_all(&metrics, y_true, y_pred, cfg)?,
        subgroups: Vec::new(),
    })
}

pub fn evaluate_classifier(labels: &[bool], scores: &[f64], n_train: usize, cfg: &BootstrapConfig) -> Result<EvalReport> {
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    Ok(EvalReport {
        n_train,
        n_test: labels.len(),
        seed: cfg.seed,
        metrics: estimate_all(&[Metric::Auroc], &y, scores, cfg)?,
        subgroups: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// Mean of `true - pred`.
    pub mean_diff: f64,
    /// Population standard deviation of the differences.
    pub std_diff: f64,
    pub lower_loa: f64,
    pub upper_loa: f64,
    /// `(mean of pair, true - pred)` for plotting.
    pub points: Vec<(f64, f64)>,
}

pub fn bland_altman(y_true: &[f64], y_pred: &[f64]) -> Result<BlandAltman> {
    check_pair(y_true, y_pred)?;
    let diffs: Vec<f64> = y_true.iter().zip(y_pred).map(|(t, p)| t - p).collect();
    let mean_diff = mean(&diffs);
    let std_diff = pop_std(&diffs);
    let points = y_true.iter().zip(y_pred).zip(&diffs).map(|((t, p), d)| ((t + p) / 2.0, *d)).collect();
    Ok(BlandAltman {
        mean_diff,
        std_diff,
        lower_loa: mean_diff - 1.96 * std_diff,
        upper_loa: mean_diff + 1.96 * std_diff,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Sex,
    Age,
    Weight,
    Bmi,
    Height,
}

impl Grouping {
    pub const ALL: [Grouping; 5] = [Grouping::Sex, Grouping::Age, Grouping::Weight, Grouping::Bmi, Grouping::Height];

    pub fn as_str(self) -> &'static str {
        match self {
            Grouping::Sex => "sex",
            Grouping::Age => "age",
            Grouping::Weight => "weight",
            Grouping::Bmi => "bmi",
            Grouping::Height => "height",
        }
    }

    fn value(self, p: &Participant) -> f64 {
        match self {
            Grouping::Sex => p.sex.indicator(),
            Grouping::Age => p.age,
            Grouping::Weight => p.weight_kg,
            Grouping::Bmi => p.bmi,
            Grouping::Height => p.height_m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub grouping: Grouping,
    /// e.g. `age<=52.3`, `sex=F`.
    pub label: String,
    pub n: usize,
    pub metrics: BTreeMap<Metric, Estimate>,
}

/// Median of unsorted values (mean of the two middle values for even n).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Indices at or below the median, and above it.
pub fn median_split(values: &[f64]) -> (f64, Vec<usize>, Vec<usize>) {
    let m = median(values);
    let (low, high): (Vec<usize>, Vec<usize>) = (0..values.len()).partition(|&i| values[i] <= m);
    (m, low, high)
}

/// Partition test rows into labelled groups. Empty groups are omitted.
pub fn subgroup_partition(test_set: &[Participant], grouping: Grouping) -> Vec<(String, Vec<usize>)> {
    let groups = match grouping {
        Grouping::Sex => [Sex::Female, Sex::Male]
            .into_iter()
            .map(|s| (format!("sex={}", s.as_str()), (0..test_set.len()).filter(|&i| test_set[i].sex == s).collect()))
            .collect::<Vec<(String, Vec<usize>)>>(),
        _ => {
            let values: Vec<f64> = test_set.iter().map(|p| grouping.value(p)).collect();
            let (m, low, high) = median_split(&values);
            let name = grouping.as_str();
            vec![(format!("{name}<={m:.3}"), low), (format!("{name}>{m:.3}"), high)]
        }
    };
    groups
        .into_iter()
        .filter(|(label, idx)| {
            if idx.is_empty() {
                warn!("subgroup {label} is empty");
            }
            !idx.is_empty()
        })
        .collect()
}

/// Full metric set per subgroup. Groups too small to evaluate are skipped
/// with a warning.
pub fn subgroup_report(
    test_set: &[Participant],
    y_true: &[f64],
    y_pred: &[f64],
    grouping: Grouping,
    cfg: &BootstrapConfig,
) -> Result<Vec<GroupReport>> {
    check_pair(y_true, y_pred)?;
    if test_set.len() != y_true.len() {
        return Err(Error::Metric("test set and predictions differ in length".into()));
    }
    let mut out = Vec::new();
    for (label, idx) in subgroup_partition(test_set, grouping) {
        let t: Vec<f64> = idx.iter().map(|&i| y_true[i]).collect();
        let p: Vec<f64> = idx.iter().map(|&i| y_pred[i]).collect();
        match evaluate_regression(&t, &p, 0, cfg) {
            Ok(r) => out.push(GroupReport { grouping, label, n: idx.len(), metrics: r.metrics }),
            Err(e) => warn!("subgroup {label} not evaluated: {e}"),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeltaScheme {
    #[serde(rename = "50/50")]
    Half,
    #[serde(rename = "80/20")]
    Substantial,
    #[serde(rename = "90/10")]
    Dramatic,
}

impl DeltaScheme {
    pub const ALL: [DeltaScheme; 3] = [DeltaScheme::Half, DeltaScheme::Substantial, DeltaScheme::Dramatic];

    pub fn as_str(self) -> &'static str {
        match self {
            DeltaScheme::Half => "50/50",
            DeltaScheme::Substantial => "80/20",
            DeltaScheme::Dramatic => "90/10",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            DeltaScheme::Half => "5050",
            DeltaScheme::Substantial => "8020",
            DeltaScheme::Dramatic => "9010",
        }
    }

    fn quantiles(self) -> (f64, f64) {
        match self {
            DeltaScheme::Half => (0.5, 0.5),
            DeltaScheme::Substantial => (0.2, 0.8),
            DeltaScheme::Dramatic => (0.1, 0.9),
        }
    }
}

/// Cut points learned on training deltas and reused unchanged on test data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaThresholds {
    pub scheme: DeltaScheme,
    pub low: f64,
    pub high: f64,
}

impl DeltaThresholds {
    pub fn fit(train_deltas: &[f64], scheme: DeltaScheme) -> Result<Self> {
        if train_deltas.len() < 4 || train_deltas.iter().any(|d| !d.is_finite()) {
            return Err(Error::Metric("delta binning needs at least 4 finite deltas".into()));
        }
        let mut s = train_deltas.to_vec();
        s.sort_by(f64::total_cmp);
        let (ql, qh) = scheme.quantiles();
        let t = DeltaThresholds { scheme, low: quantile_sorted(&s, ql), high: quantile_sorted(&s, qh) };
        let bins = t.assign(train_deltas);
        let ones = bins.iter().filter(|b| **b == Some(true)).count();
        let zeros = bins.iter().filter(|b| **b == Some(false)).count();
        if ones < 2 || zeros < 2 {
            return Err(Error::Metric(format!(
                "scheme {} leaves {zeros}/{ones} rows per class on the training deltas",
                scheme.as_str()
            )));
        }
        Ok(t)
    }

    /// `Some(true)` for the upper tail (largest declines), `Some(false)` for
    /// the lower tail, `None` for rows the scheme drops.
    pub fn assign(&self, deltas: &[f64]) -> Vec<Option<bool>> {
        deltas
            .iter()
            .map(|&d| match self.scheme {
                DeltaScheme::Half => Some(d > self.high),
                _ if d > self.high => Some(true),
                _ if d < self.low => Some(false),
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBins {
    pub thresholds: DeltaThresholds,
    /// Indices of retained rows in input order.
    pub retained: Vec<usize>,
    pub labels: Vec<bool>,
}

impl DeltaBins {
    pub fn from_assignment(thresholds: DeltaThresholds, deltas: &[f64]) -> Self {
        let (retained, labels) = thresholds
            .assign(deltas)
            .into_iter()
            .enumerate()
            .filter_map(|(i, b)| b.map(|l| (i, l)))
            .unzip();
        DeltaBins { thresholds, retained, labels }
    }
}

/// Fit thresholds on `deltas` (current minus future) and bin them.
pub fn delta_bins(deltas: &[f64], scheme: DeltaScheme) -> Result<DeltaBins> {
    let t = DeltaThresholds::fit(deltas, scheme)?;
    Ok(DeltaBins::from_assignment(t, deltas))
}

/// Two-sided permutation p-value for a Pearson correlation:
/// `(1 + #{|r_perm| >= |r_obs|}) / (1 + n_permutations)`.
pub fn permutation_pvalue(x: &[f64], y: &[f64], n_permutations: usize, seed_value: u64) -> Result<f64> {
    let observed = pearson(x, y)?.abs();
    let exceed: usize = (0..n_permutations)
        .into_par_iter()
        .map(|i| {
            let mut shuffled = y.to_vec();
            shuffled.shuffle(&mut seed::rng(seed_value, "permutation", i as u64));
            usize::from(pearson(x, &shuffled).is_ok_and(|r| r.abs() >= observed))
        })
        .sum();
    Ok((1 + exceed) as f64 / (1 + n_permutations) as f64)
}

pub fn write_bland_altman_csv<W: Write>(w: W, ba: &BlandAltman) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["mean", "diff"])?;
    for (m, d) in &ba.points {
        wr.write_record([m.to_string(), d.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<bland-altman csv>", e))?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(w: W, points: &[RocPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fpr", "tpr", "threshold"])?;
    for p in points {
        wr.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<roc csv>", e))?;
    Ok(())
}

pub fn write_scatter_csv<W: Write>(w: W, ids: &[String], y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["id", "true", "pred"])?;
    for ((id, t), p) in ids.iter().zip(y_true).zip(y_pred) {
        wr.write_record([id.clone(), t.to_string(), p.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<scatter csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohortgen::Cohort;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }

    #[test]
    fn perfect_predictions() {
        let y = [1.0, 2.0, 4.0, 8.0];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.rmse, m.r2, m.pearson, m.mae), (0.0, 1.0, Some(1.0), 0.0));
    }

    #[test]
    fn mean_prediction_has_zero_r2() {
        let y = [3.0, 5.0, 10.0];
        let p = [6.0; 3];
        assert_eq!(r2(&y, &p).unwrap(), 0.0);
    }

    #[test]
    fn two_point_example() {
        let m = regression_metrics(&[40.0, 42.0], &[41.0, 41.0]).unwrap();
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.mae, 1.0);
        let expected = (1.0 / 40.0 + 1.0 / 42.0) / 2.0;
        assert!((m.mape.unwrap() - expected).abs() < 1e-15);
        assert!((m.mape.unwrap() - 0.0244).abs() < 1e-4);
        assert!(m.pearson.is_none());
    }

    #[test]
    fn metric_errors() {
        assert!(rmse(&[1.0], &[1.0]).is_err());
        assert!(rmse(&[1.0, 2.0], &[1.0]).is_err());
        assert!(mape(&[0.0, 1.0], &[1.0, 1.0]).is_err());
        assert!(regression_metrics(&[0.0, 1.0], &[1.0, 1.5]).unwrap().mape.is_none());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[true, false], &[0.9, 0.1]).unwrap(), 1.0);
        assert_eq!(auroc(&[true, false, true], &[0.3, 0.3, 0.3]).unwrap(), 0.5);
        assert_eq!(auroc(&[true, false, true, false], &[0.8, 0.7, 0.6, 0.5]).unwrap(), 0.75);
        assert!(auroc(&[true, true], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn roc_curve_ends_at_one_one() {
        let pts = roc_curve(&[true, false, true, false], &[0.8, 0.7, 0.6, 0.5]).unwrap();
        assert_eq!(pts.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        // trapezoid area equals the rank statistic
        let area: f64 = pts.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
        assert!((area - 0.75).abs() < 1e-12);
    }

    fn pairwise_auroc(labels: &[bool], scores: &[f64]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        credit += 1.0;
                    } else if scores[i] == scores[j] {
                        credit += 0.5;
                    }
                }
            }
        }
        credit / pairs
    }

    fn definition_metrics(t: &[f64], p: &[f64]) -> [f64; 7] {
        let n = t.len() as f64;
        let e: Vec<f64> = t.iter().zip(p).map(|(a, b)| a - b).collect();
        let mse = e.iter().map(|v| v * v).sum::<f64>() / n;
        let mae = e.iter().map(|v| v.abs()).sum::<f64>() / n;
        let sd_abs = (e.iter().map(|v| (v.abs() - mae).powi(2)).sum::<f64>() / n).sqrt();
        let mt = t.iter().sum::<f64>() / n;
        let mp = p.iter().sum::<f64>() / n;
        let r2 = 1.0 - e.iter().map(|v| v * v).sum::<f64>() / t.iter().map(|v| (v - mt).powi(2)).sum::<f64>();
        let cov: f64 = t.iter().zip(p).map(|(a, b)| (a - mt) * (b - mp)).sum();
        let vt: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
        let vp: f64 = p.iter().map(|b| (b - mp).powi(2)).sum();
        let r = cov / (vt * vp).sqrt();
        let mape = t.iter().zip(p).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / n;
        [mse.sqrt(), r2, r, mse, mae, sd_abs, mape]
    }

    proptest! {
        #[test]
        fn auroc_matches_pairwise_oracle(
            data in prop::collection::vec((any::<bool>(), 0u8..6), 2..50)
        ) {
            let labels: Vec<bool> = data.iter().map(|d| d.0).collect();
            let scores: Vec<f64> = data.iter().map(|d| f64::from(d.1) / 5.0).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auroc(&labels, &scores).unwrap(), pairwise_auroc(&labels, &scores));
        }

        #[test]
        fn regression_metrics_match_definitions(
            pairs in prop::collection::vec((1.0..100.0f64, -50.0..150.0f64), 3..60)
        ) {
            let t: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let m = regression_metrics(&t, &p).unwrap();
            let o = definition_metrics(&t, &p);
            let got = [m.rmse, m.r2, m.pearson.unwrap(), m.mse, m.mae, m.std_mae, m.mape.unwrap()];
            for (g, e) in got.iter().zip(o) {
                prop_assert!(close(*g, e, 1e-12), "{g} vs {e}");
            }
        }

        #[test]
        fn median_split_partitions(values in prop::collection::vec(0.0..10.0f64, 1..40)) {
            let (m, low, high) = median_split(&values);
            prop_assert_eq!(low.len() + high.len(), values.len());
            prop_assert!(low.iter().all(|&i| values[i] <= m));
            prop_assert!(high.iter().all(|&i| values[i] > m));
        }
    }

    #[test]
    fn bootstrap_degenerate_and_deterministic() {
        let y: Vec<f64> = (0..50).map(f64::from).collect();
        let cfg = BootstrapConfig { seed: 3, ..Default::default() };
        let ci = bootstrap_ci(Metric::Rmse, &y, &y, &cfg).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.0, 0.0));
        let p: Vec<f64> = y.iter().map(|v| v + (v * 0.37).sin()).collect();
        assert_eq!(bootstrap_ci(Metric::R2, &y, &p, &cfg).unwrap(), bootstrap_ci(Metric::R2, &y, &p, &cfg).unwrap());
    }

    #[test]
    fn bootstrap_redraws_undefined_resamples() {
        // with 3 rows many resamples repeat a single row, making r2 undefined
        let t = [1.0, 2.0, 3.0];
        let p = [1.1, 2.2, 2.7];
        let ci = bootstrap_ci(Metric::R2, &t, &p, &BootstrapConfig { n_resamples: 200, ..Default::default() }).unwrap();
        assert!(ci.lower.is_finite() && ci.upper.is_finite());
        assert!(bootstrap_ci(Metric::R2, &[1.0, 1.0], &[1.0, 2.0], &BootstrapConfig::default()).is_err());
    }

    #[test]
    fn estimates_contain_their_point() {
        let mut rng = seed::rng(9, "est", 0);
        let t: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let p: Vec<f64> = t.iter().map(|v| v + 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let r = evaluate_regression(&t, &p, 10, &BootstrapConfig::default()).unwrap();
        for e in r.metrics.values() {
            assert!(e.lower <= e.point && e.point <= e.upper);
        }
    }

    #[test]
    fn bland_altman_examples() {
        let ba = bland_altman(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        assert_eq!((ba.mean_diff, ba.lower_loa, ba.upper_loa), (0.0, 0.0, 0.0));
        let ba = bland_altman(&[5.0, 7.0, 9.0], &[3.0, 5.0, 7.0]).unwrap();
        assert_eq!(ba.mean_diff, 2.0);
        assert_eq!(ba.upper_loa - ba.lower_loa, 0.0);
        let ba = bland_altman(&[1.0, -1.0], &[0.0, 0.0]).unwrap();
        assert_eq!(ba.mean_diff, 0.0);
        assert!((ba.upper_loa - 1.96).abs() < 1e-15 && (ba.lower_loa + 1.96).abs() < 1e-15);
        assert!(bland_altman(&[1.0], &[1.0]).is_err());
    }

    fn person(age: f64, sex: Sex) -> Participant {
        Participant {
            id: format!("p{age}"),
            cohort: Cohort::Baseline,
            sex,
            age,
            height_m: 1.7,
            weight_kg: 70.0,
            bmi: 70.0 / (1.7 * 1.7),
            rhr_bpm: 60.0,
            month: 1,
            vo2max_current: 40.0,
            vo2max_future: None,
            latent: None,
        }
    }

    #[test]
    fn median_goes_to_lower_group() {
        let set: Vec<Participant> = (1..=5).map(|a| person(f64::from(a), Sex::Male)).collect();
        let groups = subgroup_partition(&set, Grouping::Age);
        assert_eq!(groups[0].1, vec![0, 1, 2]);
        assert_eq!(groups[1].1, vec![3, 4]);
    }

    #[test]
    fn equal_ages_form_one_group() {
        let set: Vec<Participant> = (0..6).map(|_| person(50.0, Sex::Female)).collect();
        let groups = subgroup_partition(&set, Grouping::Age);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].1.len(), 6);
        assert_eq!(subgroup_partition(&set, Grouping::Sex).len(), 1);
    }

    #[test]
    fn delta_bins_toy() {
        let d: Vec<f64> = (1..=10).map(f64::from).collect();
        let b = delta_bins(&d, DeltaScheme::Substantial).unwrap();
        let kept: Vec<f64> = b.retained.iter().map(|&i| d[i]).collect();
        assert_eq!(kept, vec![1.0, 2.0, 9.0, 10.0]);
        assert_eq!(b.labels, vec![false, false, true, true]);
        let b = delta_bins(&d, DeltaScheme::Dramatic).unwrap_err();
        assert!(matches!(b, Error::Metric(_)));
    }

    #[test]
    fn delta_bins_half_is_balanced_on_symmetric_data() {
        let d: Vec<f64> = (-20..=20).map(f64::from).collect();
        let b = delta_bins(&d, DeltaScheme::Half).unwrap();
        assert_eq!(b.retained.len(), d.len());
        let ones = b.labels.iter().filter(|&&l| l).count();
        assert!((ones as i64 - (d.len() - ones) as i64).abs() <= 1);
    }

    #[test]
    fn delta_bins_degenerate() {
        assert!(delta_bins(&[2.0; 20], DeltaScheme::Half).is_err());
        assert!(delta_bins(&[2.0; 20], DeltaScheme::Substantial).is_err());
    }

    #[test]
    fn permutation_pvalue_behaviour() {
        let x: Vec<f64> = (0..60).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 2.0 + (v * 1.3).sin()).collect();
        let p = permutation_pvalue(&x, &y, 1000, 1).unwrap();
        assert!((p - 1.0 / 1001.0).abs() < 1e-15);
        let mut rng = seed::rng(4, "perm", 0);
        let noise: Vec<f64> = (0..60).map(|_| rng.sample(StandardNormal)).collect();
        assert!(permutation_pvalue(&x, &noise, 1000, 1).unwrap() > 0.005);
    }
}
