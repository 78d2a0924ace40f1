//! Wear-time filtering and derived channels (MET, ENMO, intensity class, HRV)
//! for a minute-level sensor week.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::cohortgen::{SensorWeek, HR_RANGE, MINUTES_PER_DAY};
use crate::error::{Error, Result};

/// Energy cost of one MET, J/min/kg.
pub const JOULES_PER_MET: f64 = 71.0;
/// Non-wear episodes must be strictly longer than this.
pub const NONWEAR_MIN_RUN: usize = 90;
/// 72 hours of wear.
pub const MIN_WEAR_MINUTES: usize = 72 * 60;
const ENMO_DIVISOR: f64 = 0.0060321;
const ENMO_OFFSET: f64 = 0.057;
const HR_SPIKE_BPM: f64 = 40.0;

/// Linear calibration from acceleration (milli-g) to movement intensity
/// (J/min/kg).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetCalibration {
    pub joules_per_mg: f64,
}

impl Default for MetCalibration {
    fn default() -> Self {
        // A brisk walk around 100 mg lands at ~3.5 METs.
        MetCalibration { joules_per_mg: 2.5 }
    }
}

impl MetCalibration {
    pub fn intensity(&self, accel_mg: f64) -> Result<f64> {
        if !(accel_mg >= 0.0) {
            return Err(Error::Data(format!("acceleration must be non-negative, got {accel_mg}")));
        }
        Ok(accel_mg * self.joules_per_mg)
    }

    pub fn accel_per_met(&self) -> f64 {
        JOULES_PER_MET / self.joules_per_mg
    }
}

pub fn intensity_to_met(joules_per_min_kg: f64) -> Result<f64> {
    if !(joules_per_min_kg >= 0.0) {
        return Err(Error::Data(format!("intensity must be non-negative, got {joules_per_min_kg}")));
    }
    Ok(joules_per_min_kg / JOULES_PER_MET)
}

pub fn accel_to_met(accel_mg: f64, cal: &MetCalibration) -> Result<f64> {
    intensity_to_met(cal.intensity(accel_mg)?)
}

pub fn derive_enmo(accel_mg: f64) -> Result<f64> {
    if !(accel_mg >= 0.0) {
        return Err(Error::Data(format!("acceleration must be non-negative, got {accel_mg}")));
    }
    Ok(accel_mg / ENMO_DIVISOR + ENMO_OFFSET)
}

/// Second-longest minus second-shortest inter-beat interval. `None` when the
/// window has fewer than four intervals.
pub fn derive_hrv(ibis_ms: &[f64]) -> Option<f64> {
    let n = ibis_ms.len();
    if n < 4 {
        return None;
    }
    // Two smallest and two largest in a single pass.
    let (mut lo1, mut lo2) = (f64::INFINITY, f64::INFINITY);
    let (mut hi1, mut hi2) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &x in ibis_ms {
        if x < lo1 {
            lo2 = lo1;
            lo1 = x;
        } else if x < lo2 {
            lo2 = x;
        }
        if x > hi1 {
            hi2 = hi1;
            hi1 = x;
        } else if x > hi2 {
            hi2 = x;
        }
    }
    Some(hi2 - lo2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    Sedentary,
    Light,
    ModerateVigorous,
    Vigorous,
}

impl IntensityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityClass::Sedentary => "sedentary",
            IntensityClass::Light => "light",
            IntensityClass::ModerateVigorous => "moderate_vigorous",
            IntensityClass::Vigorous => "vigorous",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "sedentary" => IntensityClass::Sedentary,
            "light" => IntensityClass::Light,
            "moderate_vigorous" => IntensityClass::ModerateVigorous,
            "vigorous" => IntensityClass::Vigorous,
            other => return Err(Error::Data(format!("unknown intensity class {other:?}"))),
        })
    }

    /// Vigorous minutes also count toward MVPA.
    pub fn is_mvpa(self) -> bool {
        matches!(self, IntensityClass::ModerateVigorous | IntensityClass::Vigorous)
    }
}

/// Which quantity the intensity thresholds apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdBasis {
    Met,
    /// Raw acceleration channel.
    Accel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityThresholds {
    pub basis: ThresholdBasis,
    /// Values at or below are sedentary.
    pub sedentary_max: f64,
    /// Values at or above (and not vigorous) are moderate-to-vigorous.
    pub moderate_min: f64,
    /// Values above are vigorous.
    pub vigorous_above: f64,
}

impl Default for IntensityThresholds {
    fn default() -> Self {
        IntensityThresholds { basis: ThresholdBasis::Met, sedentary_max: 1.5, moderate_min: 3.0, vigorous_above: 6.0 }
    }
}

impl IntensityThresholds {
    /// Alternate profile on the acceleration channel: < 1 sedentary, >= 1
    /// moderate-to-vigorous, >= 4.15 vigorous. No light band.
    pub fn accel_profile() -> Self {
        IntensityThresholds {
            basis: ThresholdBasis::Accel,
            sedentary_max: 1.0f64.next_down(),
            moderate_min: 1.0,
            vigorous_above: 4.15f64.next_down(),
        }
    }

    pub fn classify(&self, value: f64) -> IntensityClass {
        if value <= self.sedentary_max {
            IntensityClass::Sedentary
        } else if value > self.vigorous_above {
            IntensityClass::Vigorous
        } else if value >= self.moderate_min {
            IntensityClass::ModerateVigorous
        } else {
            IntensityClass::Light
        }
    }
}

/// Classification under the default MET thresholds.
pub fn classify_intensity(met: f64) -> IntensityClass {
    IntensityThresholds::default().classify(met)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub calibration: MetCalibration,
    pub thresholds: IntensityThresholds,
}

/// Wear mask (true = worn). A minute is non-wear when it belongs to a
/// maximal run of more than 90 zero-acceleration minutes during which heart
/// rate is non-physiological: below 30 bpm throughout, or flat (zero
/// variance) across the run.
pub fn detect_nonwear(week: &SensorWeek) -> Vec<bool> {
    let s = &week.samples;
    let mut wear = vec![true; s.len()];
    let mut i = 0;
    while i < s.len() {
        if s[i].accel_mg != 0.0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < s.len() && s[i].accel_mg == 0.0 {
            i += 1;
        }
        let run = &s[start..i];
        if run.len() > NONWEAR_MIN_RUN {
            let all_low = run.iter().all(|m| m.hr_bpm < HR_RANGE.0);
            let flat = run.iter().all(|m| m.hr_bpm == run[0].hr_bpm);
            if all_low || flat {
                wear[start..i].iter_mut().for_each(|w| *w = false);
            }
        }
    }
    wear
}

/// Clamp wear-minute HR to the physiological range and drop isolated
/// single-minute spikes more than 40 bpm away from both neighbours.
pub fn filter_hr(week: &SensorWeek, wear: &[bool]) -> Vec<Option<f64>> {
    let clamped: Vec<Option<f64>> = week
        .samples
        .iter()
        .zip(wear)
        .map(|(s, &w)| w.then(|| s.hr_bpm.clamp(HR_RANGE.0, HR_RANGE.1)))
        .collect();
    let mut out = clamped.clone();
    for t in 1..clamped.len().saturating_sub(1) {
        if let (Some(prev), Some(cur), Some(next)) = (clamped[t - 1], clamped[t], clamped[t + 1]) {
            let (a, b) = (cur - prev, cur - next);
            if a.abs() > HR_SPIKE_BPM && b.abs() > HR_SPIKE_BPM && a.signum() == b.signum() {
                out[t] = None;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanWeek {
    pub participant_id: String,
    pub start_month: u32,
    pub wear: Vec<bool>,
    /// `None` for non-wear minutes and filtered spikes.
    pub hr_bpm: Vec<Option<f64>>,
    pub accel_mg: Vec<f64>,
    pub hrv_ms: Vec<f64>,
    pub met: Vec<f64>,
    pub enmo: Vec<f64>,
    pub intensity: Vec<IntensityClass>,
}

impl CleanWeek {
    pub fn len(&self) -> usize {
        self.wear.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wear.is_empty()
    }

    pub fn wear_minutes(&self) -> usize {
        self.wear.iter().filter(|w| **w).count()
    }

    /// `(minute_index, value)` for wear minutes of a channel.
    pub fn worn<'a>(&'a self, channel: &'a [f64]) -> impl Iterator<Item = (usize, f64)> + 'a {
        channel.iter().enumerate().filter(move |(i, _)| self.wear[*i]).map(|(i, v)| (i, *v))
    }

    pub fn worn_hr(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.hr_bpm.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

pub fn clean_week(week: &SensorWeek, cfg: &PreprocessConfig) -> Result<CleanWeek> {
    week.validate()?;
    let wear = detect_nonwear(week);
    let hr_bpm = filter_hr(week, &wear);
    let n = week.samples.len();
    let mut met = Vec::with_capacity(n);
    let mut enmo = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for s in &week.samples {
        let m = accel_to_met(s.accel_mg, &cfg.calibration)?;
        met.push(m);
        enmo.push(derive_enmo(s.accel_mg)?);
        let basis = match cfg.thresholds.basis {
            ThresholdBasis::Met => m,
            ThresholdBasis::Accel => s.accel_mg,
        };
        intensity.push(cfg.thresholds.classify(basis));
    }
    Ok(CleanWeek {
        participant_id: week.participant_id.clone(),
        start_month: week.start_month,
        wear,
        hr_bpm,
        accel_mg: week.samples.iter().map(|s| s.accel_mg).collect(),
        hrv_ms: week.samples.iter().map(|s| s.hrv_ms).collect(),
        met,
        enmo,
        intensity,
    })
}

pub fn eligible(week: &CleanWeek) -> bool {
    week.wear_minutes() >= MIN_WEAR_MINUTES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DayCounts {
    pub sedentary: u32,
    pub mvpa: u32,
    pub vpa: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyIntensity {
    /// One entry per calendar day that has at least one wear minute.
    pub per_day: Vec<DayCounts>,
    pub mean_sedentary: f64,
    pub mean_mvpa: f64,
    pub mean_vpa: f64,
}

/// Per-day wear-minute counts per class and their across-day means. Days
/// without any wear are skipped.
pub fn daily_intensity_minutes(week: &CleanWeek) -> DailyIntensity {
    let days = week.len().div_ceil(MINUTES_PER_DAY);
    let mut counts = vec![DayCounts::default(); days];
    let mut worn_day = vec![false; days];
    for (i, class) in week.intensity.iter().enumerate() {
        if !week.wear[i] {
            continue;
        }
        let d = i / MINUTES_PER_DAY;
        worn_day[d] = true;
        let c = &mut counts[d];
        match class {
            IntensityClass::Sedentary => c.sedentary += 1,
            IntensityClass::Light => {}
            IntensityClass::ModerateVigorous => c.mvpa += 1,
            IntensityClass::Vigorous => {
                c.mvpa += 1;
                c.vpa += 1;
            }
        }
    }
    let per_day: Vec<DayCounts> = counts.into_iter().zip(worn_day).filter(|(_, w)| *w).map(|(c, _)| c).collect();
    let n = per_day.len().max(1) as f64;
    let avg = |f: fn(&DayCounts) -> u32| per_day.iter().map(|c| f64::from(f(c))).sum::<f64>() / n;
    DailyIntensity {
        mean_sedentary: avg(|c| c.sedentary),
        mean_mvpa: avg(|c| c.mvpa),
        mean_vpa: avg(|c| c.vpa),
        per_day,
    }
}

pub const CLEAN_HEADER: [&str; 8] =
    ["minute_index", "hr_bpm", "accel_mg", "hrv_ms", "wear", "met", "enmo", "intensity_class"];

/// Clean-week CSV: the sensor columns plus `wear,met,enmo,intensity_class`.
/// A filtered heart-rate minute is written as an empty `hr_bpm` field.
pub fn write_clean_csv<W: Write>(w: W, week: &CleanWeek) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(CLEAN_HEADER)?;
    for i in 0..week.len() {
        wtr.write_record([
            i.to_string(),
            week.hr_bpm[i].map(|v| v.to_string()).unwrap_or_default(),
            week.accel_mg[i].to_string(),
            week.hrv_ms[i].to_string(),
            u8::from(week.wear[i]).to_string(),
            week.met[i].to_string(),
            week.enmo[i].to_string(),
            week.intensity[i].as_str().to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<clean csv>", e))?;
    Ok(())
}

pub fn read_clean_csv<R: Read>(r: R, participant_id: &str, start_month: u32) -> Result<CleanWeek> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CLEAN_HEADER.iter().copied()) {
        return Err(Error::Data(format!("unexpected clean-week header {:?}", header)));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| Error::Data(format!("cannot parse {s:?}")));
    let mut week = CleanWeek {
        participant_id: participant_id.to_string(),
        start_month,
        wear: vec![],
        hr_bpm: vec![],
        accel_mg: vec![],
        hrv_ms: vec![],
        met: vec![],
        enmo: vec![],
        intensity: vec![],
    };
    for rec in rdr.records() {
        let rec = rec?;
        let hr = rec[1].trim();
        week.hr_bpm.push(if hr.is_empty() { None } else { Some(num(hr)?) });
        week.accel_mg.push(num(&rec[2])?);
        week.hrv_ms.push(num(&rec[3])?);
        week.wear.push(match rec[4].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Data(format!("wear flag must be 0/1, got {other:?}"))),
        });
        week.met.push(num(&rec[5])?);
        week.enmo.push(num(&rec[6])?);
        week.intensity.push(IntensityClass::parse(rec[7].trim())?);
    }
    Ok(week)
}
