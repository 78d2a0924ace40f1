//! Fixed-layout feature vectors: eight summary statistics per time-series
//! channel, anthropometrics, RHR and the cyclical month encoding.

use std::f64::consts::PI;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohortgen::Participant;
use crate::error::{Error, Result};
use crate::sensorproc::{self, CleanWeek, DayCounts};

pub const LAYOUT_VERSION: &str = "fv68-v1";
pub const CANONICAL_LEN: usize = 68;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Min,
    Max,
    Std,
    P25,
    P50,
    P75,
    Slope,
}

impl Statistic {
    pub const ALL: [Statistic; 8] = [
        Statistic::Mean,
        Statistic::Min,
        Statistic::Max,
        Statistic::Std,
        Statistic::P25,
        Statistic::P50,
        Statistic::P75,
        Statistic::Slope,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::Std => "std",
            Statistic::P25 => "p25",
            Statistic::P50 => "p50",
            Statistic::P75 => "p75",
            Statistic::Slope => "slope",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Accel,
    Hr,
    Hrv,
    Enmo,
    Met,
    DailySedentary,
    DailyMvpa,
    DailyVpa,
    Age,
    Sex,
    Weight,
    Height,
    Bmi,
    Rhr,
    MonthSin,
    MonthCos,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Accel => "accel",
            Source::Hr => "hr",
            Source::Hrv => "hrv",
            Source::Enmo => "enmo",
            Source::Met => "met",
            Source::DailySedentary => "daily_sedentary",
            Source::DailyMvpa => "daily_mvpa",
            Source::DailyVpa => "daily_vpa",
            Source::Age => "age",
            Source::Sex => "sex",
            Source::Weight => "weight",
            Source::Height => "height",
            Source::Bmi => "bmi",
            Source::Rhr => "rhr",
            Source::MonthSin => "month_sin",
            Source::MonthCos => "month_cos",
        }
    }

    fn is_series(self) -> bool {
        matches!(
            self,
            Source::Accel
                | Source::Hr
                | Source::Hrv
                | Source::Enmo
                | Source::Met
                | Source::DailySedentary
                | Source::DailyMvpa
                | Source::DailyVpa
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub source: Source,
    /// `None` for scalar covariates.
    pub statistic: Option<Statistic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub layout_version: String,
    pub entries: Vec<FeatureEntry>,
}

impl FeatureLayout {
    /// The canonical 68-entry layout:
    ///
    /// * accel, hr, enmo, met: all eight statistics (32)
    /// * hrv: all but `min` (7)
    /// * daily sedentary / MVPA / VPA count series: all but `min` (21)
    /// * age, sex, weight, height, bmi, rhr (6)
    /// * month sine and cosine (2)
    pub fn canonical() -> Self {
        let mut entries = Vec::with_capacity(CANONICAL_LEN);
        let series = [
            (Source::Accel, None),
            (Source::Hr, None),
            (Source::Hrv, Some(Statistic::Min)),
            (Source::Enmo, None),
            (Source::Met, None),
            (Source::DailySedentary, Some(Statistic::Min)),
            (Source::DailyMvpa, Some(Statistic::Min)),
            (Source::DailyVpa, Some(Statistic::Min)),
        ];
        for (source, dropped) in series {
            for stat in Statistic::ALL {
                if Some(stat) != dropped {
                    entries.push(FeatureEntry {
                        name: format!("{}_{}", source.as_str(), stat.as_str()),
                        source,
                        statistic: Some(stat),
                    });
                }
            }
        }
        for source in [
            Source::Age,
            Source::Sex,
            Source::Weight,
            Source::Height,
            Source::Bmi,
            Source::Rhr,
            Source::MonthSin,
            Source::MonthCos,
        ] {
            entries.push(FeatureEntry { name: source.as_str().to_string(), source, statistic: None });
        }
        FeatureLayout { layout_version: LAYOUT_VERSION.to_string(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::Config(format!("duplicate feature name {}", e.name)));
            }
            if e.source.is_series() != e.statistic.is_some() {
                return Err(Error::Config(format!("feature {} mixes series and scalar sources", e.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub std: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub slope: f64,
}

impl ChannelSummary {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Mean => self.mean,
            Statistic::Min => self.min,
            Statistic::Max => self.max,
            Statistic::Std => self.std,
            Statistic::P25 => self.p25,
            Statistic::P50 => self.p50,
            Statistic::P75 => self.p75,
            Statistic::Slope => self.slope,
        }
    }
}

/// Percentile of sorted data with linear interpolation between closest ranks
/// (`q` in [0, 1]).
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Summary of `(time_index, value)` pairs. Standard deviation is the
/// population one; slope is the OLS slope of value against time index.
pub fn summarize_channel(series: &[(f64, f64)]) -> Result<ChannelSummary> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples to summarise, got {n}")));
    }
    let nf = n as f64;
    let mean = series.iter().map(|(_, v)| v).sum::<f64>() / nf;
    let var = series.iter().map(|(_, v)| (v - mean).powi(2)).sum::<f64>() / nf;
    let t_mean = series.iter().map(|(t, _)| t).sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in series {
        sxy += (t - t_mean) * (v - mean);
        sxx += (t - t_mean).powi(2);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let mut sorted: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(ChannelSummary {
        mean,
        min: sorted[0],
        max: sorted[n - 1],
        std: var.sqrt(),
        p25: percentile_sorted(&sorted, 0.25),
        p50: percentile_sorted(&sorted, 0.50),
        p75: percentile_sorted(&sorted, 0.75),
        slope,
    })
}

/// `(sin(2*pi*m/12), cos(2*pi*m/12))`.
pub fn cyclical_month(month: u32) -> Result<(f64, f64)> {
    if !(1..=12).contains(&month) {
        return Err(Error::Data(format!("month must be in 1..=12, got {month}")));
    }
    // month 12 and month 0 are the same angle; reducing first keeps it exact.
    let angle = 2.0 * PI * f64::from(month % 12) / 12.0;
    Ok((angle.sin(), angle.cos()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub participant_id: String,
    pub layout_version: String,
    pub values: Vec<f64>,
    pub label_current: Option<f64>,
    pub label_future: Option<f64>,
}

fn series_for(week: &CleanWeek, source: Source, daily: &[DayCounts]) -> Vec<(f64, f64)> {
    let pairs = |ch: &[f64]| -> Vec<(f64, f64)> { week.worn(ch).map(|(i, v)| (i as f64, v)).collect() };
    let days = |f: fn(&DayCounts) -> u32| -> Vec<(f64, f64)> {
        daily.iter().enumerate().map(|(d, c)| (d as f64, f64::from(f(c)))).collect()
    };
    match source {
        Source::Accel => pairs(&week.accel_mg),
        Source::Hr => week.worn_hr().map(|(i, v)| (i as f64, v)).collect(),
        Source::Hrv => pairs(&week.hrv_ms),
        Source::Enmo => pairs(&week.enmo),
        Source::Met => pairs(&week.met),
        Source::DailySedentary => days(|c| c.sedentary),
        Source::DailyMvpa => days(|c| c.mvpa),
        Source::DailyVpa => days(|c| c.vpa),
        _ => unreachable!("not a series source"),
    }
}

pub fn build_feature_vector(p: &Participant, week: &CleanWeek, layout: &FeatureLayout) -> Result<FeatureVector> {
    let fail = |reason: String| Error::Featurize { id: p.id.clone(), reason };
    if week.participant_id != p.id {
        return Err(fail(format!("week belongs to {}", week.participant_id)));
    }
    if !sensorproc::eligible(week) {
        return Err(fail(format!("only {} wear minutes", week.wear_minutes())));
    }
    for (name, v) in [("age", p.age), ("weight", p.weight_kg), ("height", p.height_m), ("bmi", p.bmi), ("rhr", p.rhr_bpm)]
    {
        if !v.is_finite() {
            return Err(fail(format!("missing covariate {name}")));
        }
    }
    let daily = sensorproc::daily_intensity_minutes(week).per_day;
    let (month_sin, month_cos) = cyclical_month(week.start_month).map_err(|e| fail(e.to_string()))?;

    let mut summaries: Vec<(Source, ChannelSummary)> = Vec::new();
    let mut values = Vec::with_capacity(layout.len());
    for e in &layout.entries {
        let v = match e.statistic {
            Some(stat) => {
                let summary = match summaries.iter().find(|(s, _)| *s == e.source) {
                    Some((_, s)) => *s,
                    None => {
                        let s = summarize_channel(&series_for(week, e.source, &daily))
                            .map_err(|err| fail(format!("{}: {err}", e.source.as_str())))?;
                        summaries.push((e.source, s));
                        s
                    }
                };
                summary.get(stat)
            }
            None => match e.source {
                Source::Age => p.age,
                Source::Sex => p.sex.indicator(),
                Source::Weight => p.weight_kg,
                Source::Height => p.height_m,
                Source::Bmi => p.bmi,
                Source::Rhr => p.rhr_bpm,
                Source::MonthSin => month_sin,
                Source::MonthCos => month_cos,
                other => return Err(fail(format!("series source {} without statistic", other.as_str()))),
            },
        };
        if !v.is_finite() {
            return Err(fail(format!("non-finite value for {}", e.name)));
        }
        values.push(v);
    }
    Ok(FeatureVector {
        participant_id: p.id.clone(),
        layout_version: layout.layout_version.clone(),
        values,
        label_current: Some(p.vo2max_current),
        label_future: p.vo2max_future,
    })
}

pub fn feature_column(i: usize) -> String {
    format!("f{i:03}")
}

/// `id,label_current,label_future,f000,...`.
pub fn write_features_csv<W: Write>(w: W, layout: &FeatureLayout, rows: &[FeatureVector]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string(), "label_current".to_string(), "label_future".to_string()];
    header.extend((0..layout.len()).map(feature_column));
    wtr.write_record(&header)?;
    for r in rows {
        if r.layout_version != layout.layout_version || r.values.len() != layout.len() {
            return Err(Error::LayoutMismatch { expected: layout.layout_version.clone(), found: r.layout_version.clone() });
        }
        let mut rec = vec![
            r.participant_id.clone(),
            r.label_current.map(|v| v.to_string()).unwrap_or_default(),
            r.label_future.map(|v| v.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<features csv>", e))?;
    Ok(())
}

pub fn read_features_csv<R: Read>(r: R, layout: &FeatureLayout) -> Result<Vec<FeatureVector>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() != layout.len() + 3 || &header[0] != "id" {
        return Err(Error::LayoutMismatch {
            expected: format!("{} ({} features)", layout.layout_version, layout.len()),
            found: format!("{} columns", header.len()),
        });
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        let s = s.trim();
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::Data(format!("cannot parse {s:?}")))
        }
    };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Data(format!("cannot parse {s:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        out.push(FeatureVector {
            participant_id: rec[0].to_string(),
            layout_version: layout.layout_version.clone(),
            values,
            label_current: opt(&rec[1])?,
            label_future: opt(&rec[2])?,
        });
    }
    Ok(out)
}
