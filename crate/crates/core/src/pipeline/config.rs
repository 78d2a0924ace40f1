use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohortgen::{DriftSpec, PopulationSpec, SensorSimConfig};
use crate::error::{Error, Result};
use crate::evalmetrics::{BootstrapConfig, DeltaScheme};
use crate::featurize::FeatureLayout;
use crate::models::TrainConfig;
use crate::seed;
use crate::sensorproc::PreprocessConfig;

/// Feature subsets a model can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateSet {
    /// Age, sex, weight, height, BMI.
    Anthro,
    Rhr,
    AnthroRhr,
    /// Every feature: sensor summaries, RHR, anthropometrics and season.
    Comprehensive,
}

impl CovariateSet {
    pub const ALL: [CovariateSet; 4] =
        [CovariateSet::Anthro, CovariateSet::Rhr, CovariateSet::AnthroRhr, CovariateSet::Comprehensive];

    pub fn as_str(self) -> &'static str {
        match self {
            CovariateSet::Anthro => "anthro",
            CovariateSet::Rhr => "rhr",
            CovariateSet::AnthroRhr => "anthro_rhr",
            CovariateSet::Comprehensive => "comprehensive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown covariate set `{s}`")))
    }

    /// Column indices of this subset in `layout`.
    pub fn indices(self, layout: &FeatureLayout) -> Result<Vec<usize>> {
        const ANTHRO: [&str; 5] = ["age", "sex", "weight", "height", "bmi"];
        let names: Vec<&str> = match self {
            CovariateSet::Anthro => ANTHRO.to_vec(),
            CovariateSet::Rhr => vec!["rhr"],
            CovariateSet::AnthroRhr => ANTHRO.iter().copied().chain(["rhr"]).collect(),
            CovariateSet::Comprehensive => return Ok((0..layout.len()).collect()),
        };
        let idx: Vec<usize> = names
            .iter()
            .map(|n| layout.index_of(n).ok_or_else(|| Error::Config(format!("layout has no `{n}` feature"))))
            .collect::<Result<_>>()?;
        if idx.is_empty() {
            return Err(Error::Config(format!("covariate set {} is empty", self.as_str())));
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Linear,
    Dense,
    Equation,
}

impl ModelChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelChoice::Linear => "linear",
            ModelChoice::Dense => "dense",
            ModelChoice::Equation => "equation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ModelChoice::Linear),
            "dense" => Ok(ModelChoice::Dense),
            "equation" => Ok(ModelChoice::Equation),
            _ => Err(Error::Config(format!("unknown model `{s}`"))),
        }
    }
}

/// One row of the model comparison. The equation baseline ignores the
/// covariate set and reads age and RHR directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSpec {
    pub covariates: CovariateSet,
    pub model: ModelChoice,
}

impl RowSpec {
    pub fn name(&self) -> String {
        match self.model {
            ModelChoice::Equation => "equation".into(),
            m => format!("{}_{}", self.covariates.as_str(), m.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub n_resamples: usize,
    pub level: f64,
    pub permutations: usize,
    pub k_neighbours: usize,
    /// Participants drawn for the neighbour case study.
    pub case_study_queries: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { n_resamples: 500, level: 0.95, permutations: 1000, k_neighbours: 5, case_study_queries: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Task1Config {
    pub rows: Vec<RowSpec>,
}

impl Default for Task1Config {
    fn default() -> Self {
        use CovariateSet::*;
        use ModelChoice::*;
        let rows = [
            (Anthro, Linear),
            (Rhr, Linear),
            (AnthroRhr, Linear),
            (Comprehensive, Linear),
            (Comprehensive, Dense),
            (Anthro, Equation),
        ];
        Task1Config { rows: rows.into_iter().map(|(covariates, model)| RowSpec { covariates, model }).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Task2Config {
    /// Share of longitudinal participants held out for testing.
    pub test_fraction: f64,
    pub schemes: Vec<DeltaScheme>,
}

impl Default for Task2Config {
    fn default() -> Self {
        Task2Config { test_fraction: 0.2, schemes: DeltaScheme::ALL.to_vec() }
    }
}

/// Everything a run needs. All stochastic components draw their seeds from
/// the top-level `seed`; per-section seed fields are overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub population: PopulationSpec,
    pub drift: DriftSpec,
    pub sensor: SensorSimConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub evaluation: EvaluationConfig,
    pub task1: Task1Config,
    pub task2: Task2Config,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 42,
            population: PopulationSpec::desk(),
            drift: DriftSpec::default(),
            sensor: SensorSimConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainConfig::default(),
            evaluation: EvaluationConfig::default(),
            task1: Task1Config::default(),
            task2: Task2Config::default(),
        }
    }
}

impl Config {
    pub fn from_toml(s: &str) -> Result<Self> {
        let mut c: Config = toml::from_str(s)?;
        c.reseed(c.seed);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }

    /// Set the master seed and everything derived from it.
    pub fn reseed(&mut self, s: u64) {
        self.seed = s;
        self.population.seed = seed::derive(s, "population", 0);
        self.drift.seed = seed::derive(s, "drift", 0);
        self.train.seed = seed::derive(s, "train", 0);
    }

    pub fn sensor_seed(&self) -> u64 {
        seed::derive(self.seed, "sensor", 0)
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split", 0)
    }

    pub fn bootstrap(&self, stream: &str) -> BootstrapConfig {
        BootstrapConfig {
            n_resamples: self.evaluation.n_resamples,
            level: self.evaluation.level,
            seed: seed::derive(self.seed, &format!("bootstrap:{stream}"), 0),
        }
    }

    /// Training settings for one model, with its own seed stream.
    pub fn train_for(&self, name: &str) -> TrainConfig {
        TrainConfig { seed: seed::derive(self.train.seed, name, 0), ..self.train.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.train.validate()?;
        if self.task1.rows.is_empty() {
            return Err(Error::Config("task1.rows is empty".into()));
        }
        if !(self.task2.test_fraction > 0.0 && self.task2.test_fraction < 1.0) {
            return Err(Error::Config("task2.test_fraction must lie in (0, 1)".into()));
        }
        let e = &self.evaluation;
        if e.n_resamples == 0 || !(e.level > 0.0 && e.level < 1.0) || e.k_neighbours == 0 {
            return Err(Error::Config("evaluation needs resamples, a level in (0, 1) and k > 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = Config::default();
        let mut back = Config::from_toml(&c.to_toml()).unwrap();
        back.reseed(c.seed);
        let mut expected = c.clone();
        expected.reseed(c.seed);
        assert_eq!(back, expected);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("sed = 3").is_err());
    }

    #[test]
    fn empty_rows_rejected() {
        assert!(matches!(Config::from_toml("[task1]\nrows = []"), Err(Error::Config(_))));
    }

    #[test]
    fn covariate_indices() {
        let layout = FeatureLayout::canonical();
        assert_eq!(CovariateSet::Comprehensive.indices(&layout).unwrap().len(), 68);
        assert_eq!(CovariateSet::AnthroRhr.indices(&layout).unwrap().len(), 6);
        let rhr = CovariateSet::Rhr.indices(&layout).unwrap();
        assert_eq!(layout.entries[rhr[0]].name, "rhr");
    }

    #[test]
    fn reseeding_changes_every_stream() {
        let mut a = Config::default();
        a.reseed(1);
        let mut b = Config::default();
        b.reseed(2);
        assert_ne!(a.population.seed, b.population.seed);
        assert_ne!(a.drift.seed, b.drift.seed);
        assert_ne!(a.train.seed, b.train.seed);
        assert_ne!(a.sensor_seed(), b.sensor_seed());
    }
}
