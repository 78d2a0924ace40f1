//! Synthetic cohorts and minute-level sensor weeks with a known link between
//! behaviour, physiology and VO2max.
//!
//! Every participant carries a latent activity level `a ~ N(0, 1)`. Resting
//! heart rate is coupled to it (`z_rhr = -rho * a + sqrt(1 - rho^2) * u`) and the
//! VO2max label is produced by [`GroundTruth::vo2max`]:
//!
//! ```text
//! S   = b_age*z_age + b_bmi*z_bmi + b_rhr*z_rhr + b_act*a + b_int*(a*z_rhr + rho)
//! vo2 = mean_sex + std_sex * (S + noise_sd * e) / sqrt(Var[S] + noise_sd^2)
//! ```
//!
//! where the z-scores are taken against the per-sex population moments, so the
//! generated label reproduces the per-sex VO2max mean and standard deviation.
//! The sensor simulator then makes the heart-rate response to movement depend
//! on VO2max through the heart-rate-reserve relation in [`hr_response`].

use std::io::{Read, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sensorproc::{self, MetCalibration};

pub const MINUTES_PER_DAY: usize = 1440;
pub const HR_RANGE: (f64, f64) = (30.0, 220.0);
pub const VO2MAX_RANGE: (f64, f64) = (15.0, 70.0);
/// Baseline oxygen cost of rest, ml O2/min/kg.
const RESTING_VO2: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
        }
    }

    /// Numeric encoding used as a model covariate (male = 1).
    pub fn indicator(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::Female),
            "M" => Ok(Sex::Male),
            other => Err(Error::Data(format!("unknown sex code {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cohort {
    /// First visit; serialized as "FI".
    #[serde(rename = "FI")]
    Baseline,
    /// Return visit; serialized as "FII".
    #[serde(rename = "FII")]
    Followup,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Baseline => "FI",
            Cohort::Followup => "FII",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "FI" => Ok(Cohort::Baseline),
            "FII" => Ok(Cohort::Followup),
            other => Err(Error::Data(format!("unknown cohort {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

const fn m(mean: f64, std: f64) -> Moments {
    Moments { mean, std }
}

/// Per-sex first and second moments of every generated field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SexMoments {
    pub age: Moments,
    pub height_m: Moments,
    pub weight_kg: Moments,
    pub bmi: Moments,
    pub mvpa_min_per_day: Moments,
    pub vpa_min_per_day: Moments,
    pub rhr_bpm: Moments,
    pub vo2max: Moments,
}

impl SexMoments {
    /// Fenland I baseline, men.
    pub fn fenland_men() -> Self {
        SexMoments {
            age: m(47.70, 7.57),
            height_m: m(1.78, 0.07),
            weight_kg: m(85.85, 13.83),
            bmi: m(27.16, 3.97),
            mvpa_min_per_day: m(35.87, 22.35),
            vpa_min_per_day: m(3.27, 8.57),
            rhr_bpm: m(61.48, 8.68),
            vo2max: m(41.95, 4.61),
        }
    }

    /// Fenland I baseline, women.
    pub fn fenland_women() -> Self {
        SexMoments {
            age: m(47.66, 7.36),
            height_m: m(1.64, 0.06),
            weight_kg: m(70.54, 13.92),
            bmi: m(26.17, 4.97),
            mvpa_min_per_day: m(34.40, 22.59),
            vpa_min_per_day: m(3.31, 15.67),
            rhr_bpm: m(64.46, 8.28),
            vo2max: m(37.44, 4.73),
        }
    }

    fn all(&self) -> [(&'static str, Moments); 8] {
        [
            ("age", self.age),
            ("height_m", self.height_m),
            ("weight_kg", self.weight_kg),
            ("bmi", self.bmi),
            ("mvpa_min_per_day", self.mvpa_min_per_day),
            ("vpa_min_per_day", self.vpa_min_per_day),
            ("rhr_bpm", self.rhr_bpm),
            ("vo2max", self.vo2max),
        ]
    }
}

/// Coefficients of the ground-truth VO2max function. Versioned so that
/// generated cohorts can be traced back to the function that labelled them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruth {
    pub version: String,
    pub beta_age: f64,
    pub beta_bmi: f64,
    pub beta_rhr: f64,
    pub beta_activity: f64,
    /// Weight of the centered `activity * z_rhr` interaction.
    pub beta_interaction: f64,
    /// Correlation magnitude between latent activity and (negative) RHR.
    pub activity_rhr_coupling: f64,
    pub noise_sd: f64,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            version: "gt-v1".into(),
            beta_age: -0.30,
            beta_bmi: -0.40,
            beta_rhr: -0.35,
            beta_activity: 0.45,
            beta_interaction: -0.35,
            activity_rhr_coupling: 0.35,
            noise_sd: 0.45,
        }
    }
}

impl GroundTruth {
    /// Unnormalised signal `S`.
    pub fn signal(&self, z_age: f64, z_bmi: f64, z_rhr: f64, activity: f64) -> f64 {
        self.beta_age * z_age
            + self.beta_bmi * z_bmi
            + self.beta_rhr * z_rhr
            + self.beta_activity * activity
            + self.beta_interaction * (activity * z_rhr + self.activity_rhr_coupling)
    }

    /// Closed-form variance of `S` when the z-scores and activity are standard
    /// normal and `corr(activity, z_rhr) = -coupling`.
    pub fn signal_variance(&self) -> f64 {
        let rho = self.activity_rhr_coupling;
        self.beta_age.powi(2)
            + self.beta_bmi.powi(2)
            + self.beta_rhr.powi(2)
            + self.beta_activity.powi(2)
            - 2.0 * rho * self.beta_rhr * self.beta_activity
            + self.beta_interaction.powi(2) * (1.0 + rho * rho)
    }

    pub fn normaliser(&self) -> f64 {
        (self.signal_variance() + self.noise_sd.powi(2)).sqrt()
    }

    /// VO2max in ml O2/min/kg for standardised covariates and a noise draw.
    pub fn vo2max(&self, target: Moments, z_age: f64, z_bmi: f64, z_rhr: f64, activity: f64, noise: f64) -> f64 {
        let s = self.signal(z_age, z_bmi, z_rhr, activity) + self.noise_sd * noise;
        target.mean + target.std * s / self.normaliser()
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.activity_rhr_coupling) {
            return Err(Error::Config("activity_rhr_coupling must lie in [0, 1)".into()));
        }
        if !(self.noise_sd >= 0.0) || self.normaliser() <= 0.0 {
            return Err(Error::Config("ground truth has zero variance".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationSpec {
    pub male: SexMoments,
    pub female: SexMoments,
    pub male_fraction: f64,
    /// Participants observed at baseline only (the training pool).
    pub n_baseline_only: usize,
    /// Participants observed at baseline and follow-up.
    pub n_longitudinal: usize,
    pub seed: u64,
    pub ground_truth: GroundTruth,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            male: SexMoments::fenland_men(),
            female: SexMoments::fenland_women(),
            male_fraction: 5229.0 / 11059.0,
            n_baseline_only: 8384,
            n_longitudinal: 2675,
            seed: 42,
            ground_truth: GroundTruth::default(),
        }
    }
}

impl PopulationSpec {
    /// 3000 baseline-only / 600 longitudinal participants.
    pub fn desk() -> Self {
        PopulationSpec { n_baseline_only: 3000, n_longitudinal: 600, ..Self::default() }
    }

    pub fn moments(&self, sex: Sex) -> &SexMoments {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (sex, moments) in [("male", &self.male), ("female", &self.female)] {
            for (name, mo) in moments.all() {
                if !(mo.std > 0.0) || !mo.std.is_finite() || !mo.mean.is_finite() {
                    return Err(Error::Config(format!("{sex}.{name}: std must be > 0 (got {})", mo.std)));
                }
            }
            if moments.mvpa_min_per_day.mean <= 0.0 || moments.vpa_min_per_day.mean <= 0.0 {
                return Err(Error::Config(format!("{sex}: activity means must be > 0")));
            }
        }
        if self.n_baseline_only == 0 || self.n_longitudinal == 0 {
            return Err(Error::Config("cohort sizes must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.male_fraction) {
            return Err(Error::Config("male_fraction must lie in [0, 1]".into()));
        }
        self.ground_truth.validate()
    }

    pub fn total(&self) -> usize {
        self.n_baseline_only + self.n_longitudinal
    }
}

/// Hidden per-participant traits that drive the sensor simulator. Never
/// written to the cohort file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentTraits {
    pub activity: f64,
    /// Standardised RHR residual independent of activity.
    pub rhr_residual: f64,
    /// Independent component of vigorous activity.
    pub vigorous_residual: f64,
    pub mvpa_target: f64,
    pub vpa_target: f64,
    /// Multiplier on the heart-rate response to movement.
    pub hr_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: String,
    pub cohort: Cohort,
    pub sex: Sex,
    pub age: f64,
    pub height_m: f64,
    pub weight_kg: f64,
    pub bmi: f64,
    pub rhr_bpm: f64,
    pub month: u32,
    pub vo2max_current: f64,
    pub vo2max_future: Option<f64>,
    #[serde(skip)]
    pub latent: Option<LatentTraits>,
}

impl Participant {
    pub fn validate(&self) -> Result<()> {
        let bmi = self.weight_kg / (self.height_m * self.height_m);
        if !((bmi - self.bmi).abs() <= 1e-6 * self.bmi.abs()) {
            return Err(Error::Data(format!("{}: bmi {} inconsistent with weight/height^2 {}", self.id, self.bmi, bmi)));
        }
        if !(1..=12).contains(&self.month) {
            return Err(Error::Data(format!("{}: month {} out of range", self.id, self.month)));
        }
        if !(self.vo2max_current > 0.0) || self.vo2max_future.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Data(format!("{}: vo2max must be positive", self.id)));
        }
        if !(self.rhr_bpm > 0.0) || !(self.age >= 0.0) {
            return Err(Error::Data(format!("{}: invalid age or rhr", self.id)));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw `mean + std * z`, redrawing until the value falls inside `range`.
fn truncated(rng: &mut ChaCha8Rng, mo: Moments, range: (f64, f64)) -> f64 {
    loop {
        let v = mo.mean + mo.std * normal(rng);
        if v >= range.0 && v <= range.1 {
            return v;
        }
    }
}

/// Lognormal with the given arithmetic mean and std, driven by a standard
/// normal `z`.
fn lognormal_matched(mo: Moments, z: f64) -> f64 {
    let s2 = (1.0 + (mo.std / mo.mean).powi(2)).ln();
    let mu = mo.mean.ln() - s2 / 2.0;
    (mu + s2.sqrt() * z).exp()
}

const VIGOROUS_ACTIVITY_LOADING: f64 = 0.7;

fn activity_targets(mo: &SexMoments, activity: f64, vigorous_residual: f64) -> (f64, f64) {
    let vz = VIGOROUS_ACTIVITY_LOADING * activity
        + (1.0 - VIGOROUS_ACTIVITY_LOADING * VIGOROUS_ACTIVITY_LOADING).sqrt() * vigorous_residual;
    (lognormal_matched(mo.mvpa_min_per_day, activity), lognormal_matched(mo.vpa_min_per_day, vz))
}

fn participant_id(index: usize) -> String {
    format!("P{index:06}")
}

fn generate_one(spec: &PopulationSpec, index: usize) -> Participant {
    let mut rng = seed::rng(spec.seed, "participant", index as u64);
    let gt = &spec.ground_truth;
    let sex = if rng.random::<f64>() < spec.male_fraction { Sex::Male } else { Sex::Female };
    let mo = spec.moments(sex);
    let month = rng.random_range(1..=12u32);

    let age = truncated(&mut rng, mo.age, (18.0, 90.0));
    let height_m = truncated(&mut rng, mo.height_m, (1.30, 2.20));
    let bmi = truncated(&mut rng, mo.bmi, (14.0, 60.0));
    let weight_kg = bmi * height_m * height_m;

    let rho = gt.activity_rhr_coupling;
    let activity: f64 = normal(&mut rng);
    let (rhr_bpm, rhr_residual) = loop {
        let u = normal(&mut rng);
        let z = -rho * activity + (1.0 - rho * rho).sqrt() * u;
        let rhr = mo.rhr_bpm.mean + mo.rhr_bpm.std * z;
        if rhr >= HR_RANGE.0 && rhr <= HR_RANGE.1 {
            break (rhr, u);
        }
    };
    let vigorous_residual = normal(&mut rng);
    let (mvpa_target, vpa_target) = activity_targets(mo, activity, vigorous_residual);
    let hr_efficiency = (0.08 * normal(&mut rng)).exp();

    let z_age = (age - mo.age.mean) / mo.age.std;
    let z_bmi = (bmi - mo.bmi.mean) / mo.bmi.std;
    let z_rhr = (rhr_bpm - mo.rhr_bpm.mean) / mo.rhr_bpm.std;
    let vo2max_current = loop {
        let v = gt.vo2max(mo.vo2max, z_age, z_bmi, z_rhr, activity, normal(&mut rng));
        if v >= VO2MAX_RANGE.0 && v <= VO2MAX_RANGE.1 {
            break v;
        }
    };

    Participant {
        id: participant_id(index),
        cohort: Cohort::Baseline,
        sex,
        age,
        height_m,
        weight_kg,
        bmi,
        rhr_bpm,
        month,
        vo2max_current,
        vo2max_future: None,
        latent: Some(LatentTraits { activity, rhr_residual, vigorous_residual, mvpa_target, vpa_target, hr_efficiency }),
    }
}

/// Generate the baseline cohort. The first `n_baseline_only` participants
/// are baseline-only; the remaining `n_longitudinal` are the ones that get a
/// follow-up snapshot.
pub fn generate_cohort(spec: &PopulationSpec) -> Result<Vec<Participant>> {
    spec.validate()?;
    use rayon::prelude::*;
    Ok((0..spec.total()).into_par_iter().map(|i| generate_one(spec, i)).collect())
}

/// Parameters for the follow-up snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftSpec {
    pub gap_years: f64,
    /// Mean VO2max change (future - current), ml O2/min/kg.
    pub trend: f64,
    /// Fraction of the latent activity level that regresses toward the mean.
    pub activity_reversion: f64,
    /// Std of the new activity innovation.
    pub activity_noise: f64,
    /// Std of VO2max change unrelated to behaviour.
    pub vo2_noise: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec { gap_years: 7.0, trend: 0.0, activity_reversion: 0.6, activity_noise: 0.4, vo2_noise: 0.8, seed: 42 }
    }
}

impl DriftSpec {
    /// No behaviour change and no noise: the follow-up label equals the baseline.
    pub fn identity() -> Self {
        DriftSpec { trend: 0.0, activity_reversion: 0.0, activity_noise: 0.0, vo2_noise: 0.0, ..Self::default() }
    }
}

/// Follow-up snapshot: aged by `gap_years`, latent activity drifted, and the
/// VO2max label moved by the change the ground-truth function assigns to the
/// activity drift plus trend and noise. Sets `vo2max_future` on the returned
/// follow-up copy; the caller is expected to copy it onto the baseline record as well.
pub fn generate_future_snapshot(p: &Participant, spec: &PopulationSpec, drift: &DriftSpec) -> Result<Participant> {
    let latent = p
        .latent
        .ok_or_else(|| Error::Data(format!("{}: participant has no latent traits", p.id)))?;
    let mut rng = seed::rng(drift.seed, &format!("drift:{}", p.id), 0);
    let mo = spec.moments(p.sex);
    let gt = &spec.ground_truth;

    let activity = (1.0 - drift.activity_reversion) * latent.activity + drift.activity_noise * normal(&mut rng);
    let z_age = (p.age - mo.age.mean) / mo.age.std;
    let z_bmi = (p.bmi - mo.bmi.mean) / mo.bmi.std;
    let z_rhr = (p.rhr_bpm - mo.rhr_bpm.mean) / mo.rhr_bpm.std;
    let scale = mo.vo2max.std / gt.normaliser();
    let behaviour = scale * (gt.signal(z_age, z_bmi, z_rhr, activity) - gt.signal(z_age, z_bmi, z_rhr, latent.activity));
    let future = loop {
        let v = p.vo2max_current + drift.trend + behaviour + drift.vo2_noise * normal(&mut rng);
        if (VO2MAX_RANGE.0..=VO2MAX_RANGE.1).contains(&v) {
            break v;
        }
        if drift.vo2_noise == 0.0 {
            break v.clamp(VO2MAX_RANGE.0, VO2MAX_RANGE.1);
        }
    };
    let month = rng.random_range(1..=12u32);
    let (mvpa_target, vpa_target) = activity_targets(mo, activity, latent.vigorous_residual);

    Ok(Participant {
        cohort: Cohort::Followup,
        age: p.age + drift.gap_years,
        month,
        vo2max_future: Some(future),
        latent: Some(LatentTraits { activity, mvpa_target, vpa_target, ..latent }),
        ..p.clone()
    })
}

/// Mean heart rate at a given MET level: the fraction of VO2 reserve in use
/// maps linearly onto the fraction of heart-rate reserve.
pub fn hr_response(hr_rest: f64, hr_max: f64, vo2max: f64, efficiency: f64, met: f64) -> f64 {
    let vo2_reserve_used = RESTING_VO2 * (met - 1.0).max(0.0) / (vo2max - RESTING_VO2);
    hr_rest + (hr_max - hr_rest) * efficiency * vo2_reserve_used
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSimConfig {
    pub days: usize,
    /// Minute of day at which sleep starts.
    pub sleep_start: usize,
    pub sleep_minutes: usize,
    pub mean_bout_minutes: f64,
    /// Day-to-day lognormal spread of active minutes.
    pub day_activity_sd: f64,
    /// Probability that an awake resting minute is light activity.
    pub light_rate: f64,
    pub awake_hr_offset: f64,
    pub sleep_hr_offset: f64,
    pub hr_noise_sd: f64,
    pub ibis_per_minute: usize,
    pub nonwear_fraction: f64,
    pub nonwear_min_minutes: usize,
    pub nonwear_max_minutes: usize,
    pub calibration: MetCalibration,
}

impl Default for SensorSimConfig {
    fn default() -> Self {
        SensorSimConfig {
            days: 6,
            sleep_start: 23 * 60,
            sleep_minutes: 8 * 60,
            mean_bout_minutes: 10.0,
            day_activity_sd: 0.3,
            light_rate: 0.08,
            awake_hr_offset: 8.0,
            sleep_hr_offset: -2.0,
            hr_noise_sd: 3.0,
            ibis_per_minute: 8,
            nonwear_fraction: 0.10,
            nonwear_min_minutes: 95,
            nonwear_max_minutes: 240,
            calibration: MetCalibration::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinuteSample {
    pub minute_index: u32,
    pub hr_bpm: f64,
    pub accel_mg: f64,
    pub hrv_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorWeek {
    pub participant_id: String,
    pub start_month: u32,
    pub samples: Vec<MinuteSample>,
    /// (start minute, length) of an injected non-wear episode, if any.
    pub injected_nonwear: Option<(usize, usize)>,
}

impl SensorWeek {
    pub fn validate(&self) -> Result<()> {
        for w in self.samples.windows(2) {
            if w[1].minute_index != w[0].minute_index + 1 {
                return Err(Error::Data(format!("{}: minute indices not contiguous", self.participant_id)));
            }
        }
        for s in &self.samples {
            for v in [s.hr_bpm, s.accel_mg, s.hrv_ms] {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Data(format!(
                        "{}: minute {} has invalid value {v}",
                        self.participant_id, s.minute_index
                    )));
                }
            }
        }
        if !(1..=12).contains(&self.start_month) {
            return Err(Error::Data(format!("{}: month out of range", self.participant_id)));
        }
        Ok(())
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Simulate one participant-week at minute resolution.
pub fn generate_sensor_week(p: &Participant, cfg: &SensorSimConfig, seed: u64) -> Result<SensorWeek> {
    p.validate()?;
    let latent = p
        .latent
        .ok_or_else(|| Error::Data(format!("{}: participant has no latent traits", p.id)))?;
    let vo2max = p.vo2max_for_cohort();
    let tag = format!("sensor:{}:{}", p.id, p.cohort.as_str());
    let mut rng = seed::rng(seed, &tag, 0);

    let n = cfg.days * MINUTES_PER_DAY;
    let awake_minutes = (MINUTES_PER_DAY - cfg.sleep_minutes) as f64;
    let hr_max = 208.0 - 0.7 * p.age;
    let hr_awake = p.rhr_bpm + cfg.awake_hr_offset;
    let hr_sleep = p.rhr_bpm + cfg.sleep_hr_offset;
    let p_end = 1.0 / cfg.mean_bout_minutes;
    let vigorous_share = (latent.vpa_target / latent.mvpa_target.max(1e-9)).min(1.0);
    let accel_per_met = cfg.calibration.accel_per_met();

    let mut samples = Vec::with_capacity(n);
    let mut ibis = vec![0.0; cfg.ibis_per_minute];
    let mut active = false;
    let mut vigorous = false;
    let mut p_start = 0.0;
    for t in 0..n {
        let minute_of_day = t % MINUTES_PER_DAY;
        if minute_of_day == 0 {
            let sd = cfg.day_activity_sd;
            let today = latent.mvpa_target * (sd * normal(&mut rng) - sd * sd / 2.0).exp();
            let share = (today / awake_minutes).min(0.6);
            p_start = p_end * share / (1.0 - share);
            active = false;
        }
        let asleep = (minute_of_day + MINUTES_PER_DAY - cfg.sleep_start) % MINUTES_PER_DAY < cfg.sleep_minutes;
        let (met, base_hr) = if asleep {
            active = false;
            (rng.random_range(0.05..0.25), hr_sleep)
        } else {
            if active {
                if rng.random::<f64>() < p_end {
                    active = false;
                }
            } else if rng.random::<f64>() < p_start {
                active = true;
                vigorous = rng.random::<f64>() < vigorous_share;
            }
            let met = if active {
                if vigorous {
                    rng.random_range(6.3..9.5)
                } else {
                    rng.random_range(3.2..5.8)
                }
            } else if rng.random::<f64>() < cfg.light_rate {
                rng.random_range(1.6..2.9)
            } else {
                rng.random_range(0.5..1.4)
            };
            (met, hr_awake)
        };
        let accel = round2(met * accel_per_met);
        let mean_hr = hr_response(base_hr, hr_max, vo2max, latent.hr_efficiency, met);
        let hr = (mean_hr + cfg.hr_noise_sd * normal(&mut rng)).clamp(HR_RANGE.0, HR_RANGE.1);
        // Beat-to-beat spread shrinks with heart rate and grows with fitness.
        let mean_ibi = 60_000.0 / hr;
        let ibi_sd = 12.0 * (vo2max / 40.0) * (60.0 / hr);
        for ibi in ibis.iter_mut() {
            *ibi = mean_ibi + ibi_sd * normal(&mut rng);
        }
        let hrv = sensorproc::derive_hrv(&ibis).unwrap_or(0.0).max(0.0);
        samples.push(MinuteSample { minute_index: t as u32, hr_bpm: round2(hr), accel_mg: accel, hrv_ms: round2(hrv) });
    }

    let mut injected_nonwear = None;
    if rng.random::<f64>() < cfg.nonwear_fraction {
        let len = rng.random_range(cfg.nonwear_min_minutes..=cfg.nonwear_max_minutes).min(n);
        let start = rng.random_range(0..=n - len);
        for s in &mut samples[start..start + len] {
            s.accel_mg = 0.0;
            s.hr_bpm = 0.0;
            s.hrv_ms = 0.0;
        }
        injected_nonwear = Some((start, len));
    }

    Ok(SensorWeek { participant_id: p.id.clone(), start_month: p.month, samples, injected_nonwear })
}

impl Participant {
    /// The label matching this record's timepoint.
    pub fn vo2max_for_cohort(&self) -> f64 {
        match self.cohort {
            Cohort::Baseline => self.vo2max_current,
            Cohort::Followup => self.vo2max_future.unwrap_or(self.vo2max_current),
        }
    }
}

pub const COHORT_HEADER: [&str; 11] = [
    "id",
    "cohort",
    "sex",
    "age",
    "height_m",
    "weight_kg",
    "bmi",
    "rhr_bpm",
    "month",
    "vo2max_current",
    "vo2max_future",
];

pub fn write_cohort_csv<W: Write>(w: W, participants: &[Participant]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COHORT_HEADER)?;
    for p in participants {
        wtr.write_record([
            p.id.clone(),
            p.cohort.as_str().to_string(),
            p.sex.as_str().to_string(),
            p.age.to_string(),
            p.height_m.to_string(),
            p.weight_kg.to_string(),
            p.bmi.to_string(),
            p.rhr_bpm.to_string(),
            p.month.to_string(),
            p.vo2max_current.to_string(),
            p.vo2max_future.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<cohort csv>", e))?;
    Ok(())
}

fn parse_f64(field: &str, name: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Data(format!("{name}: cannot parse {field:?}")))
}

pub fn read_cohort_csv<R: Read>(r: R) -> Result<Vec<Participant>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(COHORT_HEADER.iter().copied()) {
        return Err(Error::Data(format!("unexpected cohort header {:?}", header)));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let future = rec[10].trim();
        let p = Participant {
            id: rec[0].to_string(),
            cohort: Cohort::parse(&rec[1])?,
            sex: Sex::parse(&rec[2])?,
            age: parse_f64(&rec[3], "age")?,
            height_m: parse_f64(&rec[4], "height_m")?,
            weight_kg: parse_f64(&rec[5], "weight_kg")?,
            bmi: parse_f64(&rec[6], "bmi")?,
            rhr_bpm: parse_f64(&rec[7], "rhr_bpm")?,
            month: rec[8].trim().parse().map_err(|_| Error::Data(format!("month: cannot parse {:?}", &rec[8])))?,
            vo2max_current: parse_f64(&rec[9], "vo2max_current")?,
            vo2max_future: if future.is_empty() { None } else { Some(parse_f64(future, "vo2max_future")?) },
            latent: None,
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

pub const SENSOR_HEADER: [&str; 4] = ["minute_index", "hr_bpm", "accel_mg", "hrv_ms"];

pub fn write_sensor_csv<W: Write>(w: W, week: &SensorWeek) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(SENSOR_HEADER)?;
    for s in &week.samples {
        wtr.write_record([
            s.minute_index.to_string(),
            s.hr_bpm.to_string(),
            s.accel_mg.to_string(),
            s.hrv_ms.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<sensor csv>", e))?;
    Ok(())
}

/// Sensor files carry no participant metadata; id and start month are
/// supplied by the caller (normally from the cohort file).
pub fn read_sensor_csv<R: Read>(r: R, participant_id: &str, start_month: u32) -> Result<SensorWeek> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(SENSOR_HEADER.iter().copied()) {
        return Err(Error::Data(format!("unexpected sensor header {:?}", header)));
    }
    let mut samples = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        samples.push(MinuteSample {
            minute_index: rec[0].trim().parse().map_err(|_| Error::Data(format!("bad minute index {:?}", &rec[0])))?,
            hr_bpm: parse_f64(&rec[1], "hr_bpm")?,
            accel_mg: parse_f64(&rec[2], "accel_mg")?,
            hrv_ms: parse_f64(&rec[3], "hrv_ms")?,
        });
    }
    let week = SensorWeek { participant_id: participant_id.to_string(), start_month, samples, injected_nonwear: None };
    week.validate()?;
    Ok(week)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        (s / n as f64, n)
    }

    #[test]
    fn default_spec_matches_population_table() {
        let spec = PopulationSpec::default();
        assert_eq!(spec.male.vo2max, Moments { mean: 41.95, std: 4.61 });
        assert_eq!(spec.female.vo2max, Moments { mean: 37.44, std: 4.73 });
        assert_eq!(spec.male.rhr_bpm, Moments { mean: 61.48, std: 8.68 });
        assert_eq!(spec.female.bmi, Moments { mean: 26.17, std: 4.97 });
        assert_eq!(spec.n_baseline_only + spec.n_longitudinal, 11059);
        spec.validate().unwrap();
    }

    #[test]
    fn zero_std_is_config_error() {
        let mut spec = PopulationSpec::desk();
        spec.male.age.std = 0.0;
        assert!(matches!(generate_cohort(&spec), Err(Error::Config(_))));
        let mut spec = PopulationSpec::desk();
        spec.n_longitudinal = 0;
        assert!(matches!(generate_cohort(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn signal_variance_matches_simulation() {
        let gt = GroundTruth::default();
        let mut rng = seed::rng(1, "var", 0);
        let rho = gt.activity_rhr_coupling;
        let n = 200_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let a = normal(&mut rng);
                let z = -rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng);
                gt.signal(normal(&mut rng), normal(&mut rng), z, a)
            })
            .collect();
        let mu = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n as f64;
        assert!(mu.abs() < 0.01, "signal mean {mu}");
        assert!((var - gt.signal_variance()).abs() / gt.signal_variance() < 0.02, "{var} vs {}", gt.signal_variance());
    }

    #[test]
    fn cohort_moments_within_three_standard_errors() {
        let spec = PopulationSpec { n_baseline_only: 8000, n_longitudinal: 2000, ..PopulationSpec::default() };
        let cohort = generate_cohort(&spec).unwrap();
        for sex in [Sex::Male, Sex::Female] {
            let mo = spec.moments(sex);
            let group: Vec<&Participant> = cohort.iter().filter(|p| p.sex == sex).collect();
            let fields: [(&str, Moments, fn(&Participant) -> f64); 6] = [
                ("age", mo.age, |p| p.age),
                ("height", mo.height_m, |p| p.height_m),
                ("weight", mo.weight_kg, |p| p.weight_kg),
                ("bmi", mo.bmi, |p| p.bmi),
                ("rhr", mo.rhr_bpm, |p| p.rhr_bpm),
                ("vo2max", mo.vo2max, |p| p.vo2max_current),
            ];
            for (name, target, get) in fields {
                let (avg, n) = mean(group.iter().map(|p| get(p)));
                assert!(n >= 1000);
                let tol = 3.0 * target.std / (n as f64).sqrt();
                assert!((avg - target.mean).abs() <= tol, "{sex:?} {name}: {avg} vs {} ± {tol}", target.mean);
            }
        }
    }

    #[test]
    fn vo2max_negatively_correlated_with_rhr() {
        let cohort = generate_cohort(&PopulationSpec::desk()).unwrap();
        let x: Vec<f64> = cohort.iter().map(|p| p.rhr_bpm).collect();
        let y: Vec<f64> = cohort.iter().map(|p| p.vo2max_current).collect();
        let r = crate::evalmetrics::pearson(&x, &y).unwrap();
        assert!(r <= -0.3, "r = {r}");
    }

    #[test]
    fn participants_are_valid_and_in_range() {
        let cohort = generate_cohort(&PopulationSpec { n_baseline_only: 500, n_longitudinal: 100, ..PopulationSpec::desk() }).unwrap();
        for p in &cohort {
            p.validate().unwrap();
            assert!((VO2MAX_RANGE.0..=VO2MAX_RANGE.1).contains(&p.vo2max_current));
            assert!((HR_RANGE.0..=HR_RANGE.1).contains(&p.rhr_bpm));
        }
    }

    #[test]
    fn cohort_csv_is_deterministic_and_round_trips() {
        let spec = PopulationSpec { n_baseline_only: 50, n_longitudinal: 10, ..PopulationSpec::desk() };
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_cohort_csv(&mut a, &generate_cohort(&spec).unwrap()).unwrap();
        write_cohort_csv(&mut b, &generate_cohort(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let back = read_cohort_csv(a.as_slice()).unwrap();
        let mut c = Vec::new();
        write_cohort_csv(&mut c, &back).unwrap();
        assert_eq!(a, c);
        assert!(String::from_utf8(a).unwrap().starts_with(
            "id,cohort,sex,age,height_m,weight_kg,bmi,rhr_bpm,month,vo2max_current,vo2max_future\n"
        ));
    }

    #[test]
    fn identity_drift_keeps_label() {
        let spec = PopulationSpec { n_baseline_only: 5, n_longitudinal: 5, ..PopulationSpec::desk() };
        let cohort = generate_cohort(&spec).unwrap();
        for p in &cohort {
            let f = generate_future_snapshot(p, &spec, &DriftSpec::identity()).unwrap();
            assert_eq!(f.vo2max_future, Some(p.vo2max_current));
            assert_eq!(f.cohort, Cohort::Followup);
            assert!((f.age - p.age - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn age_gap_default_is_seven_years() {
        let spec = PopulationSpec::desk();
        let mut p = generate_one(&spec, 0);
        p.age = 47.0;
        let f = generate_future_snapshot(&p, &spec, &DriftSpec::default()).unwrap();
        assert_eq!(f.age, 54.0);
    }

    #[test]
    fn default_drift_is_roughly_symmetric_and_deterministic() {
        let spec = PopulationSpec { n_baseline_only: 1, n_longitudinal: 3000, ..PopulationSpec::desk() };
        let cohort = generate_cohort(&spec).unwrap();
        let drift = DriftSpec::default();
        let deltas: Vec<f64> = cohort
            .iter()
            .map(|p| p.vo2max_current - generate_future_snapshot(p, &spec, &drift).unwrap().vo2max_future.unwrap())
            .collect();
        let pos = deltas.iter().filter(|d| **d > 0.0).count();
        assert!((pos as f64 / deltas.len() as f64 - 0.5).abs() < 0.05, "{pos}");
        let again = generate_future_snapshot(&cohort[7], &spec, &drift).unwrap();
        assert_eq!(again, generate_future_snapshot(&cohort[7], &spec, &drift).unwrap());
    }

    #[test]
    fn sensor_week_shape_and_validity() {
        let spec = PopulationSpec::desk();
        let p = generate_one(&spec, 3);
        let w = generate_sensor_week(&p, &SensorSimConfig::default(), 9).unwrap();
        assert_eq!(w.samples.len(), 8640);
        w.validate().unwrap();
        assert_eq!(w, generate_sensor_week(&p, &SensorSimConfig::default(), 9).unwrap());
    }

    #[test]
    fn fitter_participant_has_lower_heart_rate_for_same_activity() {
        // oracle: the documented response function itself
        let (rest, max) = (70.0, 180.0);
        for met in [1.5, 3.0, 5.0, 8.0] {
            assert!(hr_response(rest, max, 50.0, 1.0, met) < hr_response(rest, max, 30.0, 1.0, met));
        }
        let spec = PopulationSpec::desk();
        let mut a = generate_one(&spec, 11);
        let mut b = a.clone();
        a.vo2max_current = 50.0;
        b.vo2max_current = 30.0;
        let cfg = SensorSimConfig { nonwear_fraction: 0.0, ..SensorSimConfig::default() };
        let wa = generate_sensor_week(&a, &cfg, 5).unwrap();
        let wb = generate_sensor_week(&b, &cfg, 5).unwrap();
        for (x, y) in wa.samples.iter().zip(&wb.samples) {
            assert_eq!(x.accel_mg, y.accel_mg);
        }
        let (ha, _) = mean(wa.samples.iter().map(|s| s.hr_bpm));
        let (hb, _) = mean(wb.samples.iter().map(|s| s.hr_bpm));
        assert!(ha < hb, "{ha} vs {hb}");
    }

    #[test]
    fn injected_nonwear_is_a_long_zero_run() {
        let spec = PopulationSpec::desk();
        let p = generate_one(&spec, 2);
        let cfg = SensorSimConfig { nonwear_fraction: 1.0, ..SensorSimConfig::default() };
        let w = generate_sensor_week(&p, &cfg, 1).unwrap();
        let (start, len) = w.injected_nonwear.unwrap();
        assert!(len >= 91);
        assert!(w.samples[start..start + len].iter().all(|s| s.accel_mg == 0.0));
    }

    #[test]
    fn roughly_ten_percent_of_weeks_have_nonwear() {
        let spec = PopulationSpec { n_baseline_only: 400, n_longitudinal: 100, ..PopulationSpec::desk() };
        let cohort = generate_cohort(&spec).unwrap();
        let cfg = SensorSimConfig::default();
        let hits = cohort
            .iter()
            .filter(|p| generate_sensor_week(p, &cfg, 3).unwrap().injected_nonwear.is_some())
            .count();
        assert!((30..=70).contains(&hits), "{hits}");
    }

    #[test]
    fn sensor_csv_round_trips() {
        let p = generate_one(&PopulationSpec::desk(), 4);
        let w = generate_sensor_week(&p, &SensorSimConfig::default(), 2).unwrap();
        let mut buf = Vec::new();
        write_sensor_csv(&mut buf, &w).unwrap();
        assert!(buf.starts_with(b"minute_index,hr_bpm,accel_mg,hrv_ms\n"));
        let back = read_sensor_csv(buf.as_slice(), &w.participant_id, w.start_month).unwrap();
        assert_eq!(back.samples, w.samples);
    }
}
