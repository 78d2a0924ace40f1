//! Self-describing model file: metadata, the fitted transform and the
//! estimator parameters in one JSON document.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "metadata": { "task": "...", "covariate_set": "...", "seed": 42,
//!                 "layout_version": "fv68-v1", "input_len": 68, "config": {...} },
//!   "transform": { "mean": [...], "scale": [...], "components": [[...]], ... },
//!   "estimator": { "type": "dense", "net": { "architecture": {...}, "layers": [...] },
//!                  "target_mean": 0.0, "target_std": 1.0 },
//!   "history": { "epochs": [...], "best_epoch": 12, ... }
//! }
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dense::Head;
use super::equation::EquationModel;
use super::linear::LinearModel;
use super::train::{TrainConfig, TrainedNet, TrainingHistory};
use crate::error::{Error, Result};
use crate::transform::FittedTransform;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub task: String,
    pub covariate_set: String,
    pub seed: u64,
    pub layout_version: String,
    /// Width of the raw feature vectors the bundle accepts.
    pub input_len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Estimator {
    Linear(LinearModel),
    Dense(TrainedNet),
    Equation(EquationModel),
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Linear(_) => "linear",
            Estimator::Dense(_) => "dense",
            Estimator::Equation(_) => "equation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub metadata: BundleMetadata,
    /// Absent for the equation baseline, which reads raw columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<FittedTransform>,
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<TrainingHistory>,
}

impl ModelBundle {
    pub fn new(
        metadata: BundleMetadata,
        transform: Option<FittedTransform>,
        estimator: Estimator,
        history: Option<TrainingHistory>,
    ) -> Result<Self> {
        if !matches!(estimator, Estimator::Equation(_)) && transform.is_none() {
            return Err(Error::Config(format!("{} bundles need a fitted transform", estimator.name())));
        }
        if let Some(t) = &transform {
            t.check_layout(&metadata.layout_version, metadata.input_len)?;
        }
        Ok(ModelBundle { format_version: BUNDLE_FORMAT_VERSION, metadata, transform, estimator, history })
    }

    pub fn is_classifier(&self) -> bool {
        matches!(&self.estimator, Estimator::Dense(t) if t.net.arch.head == Head::Binary)
    }

    fn check_rows(&self, layout_version: &str, rows: &[&[f64]]) -> Result<()> {
        let expected = &self.metadata;
        for r in rows {
            if layout_version != expected.layout_version || r.len() != expected.input_len {
                return Err(Error::LayoutMismatch {
                    expected: format!("{} ({} features)", expected.layout_version, expected.input_len),
                    found: format!("{layout_version} ({} features)", r.len()),
                });
            }
        }
        Ok(())
    }

    /// Apply the stored transform to raw feature rows.
    pub fn project(&self, layout_version: &str, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        self.check_rows(layout_version, rows)?;
        let t = self
            .transform
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("{} bundle has no transform", self.estimator.name())))?;
        t.apply(layout_version, rows)
    }

    /// Inference on raw feature rows. Dense models run with dropout off and
    /// batch-norm running statistics.
    pub fn predict(&self, layout_version: &str, rows: &[&[f64]]) -> Result<Vec<f64>> {
        self.check_rows(layout_version, rows)?;
        match &self.estimator {
            Estimator::Equation(eq) => rows.iter().map(|r| eq.predict_one(r)).collect(),
            Estimator::Linear(lin) => Ok(self.project(layout_version, rows)?.iter().map(|z| lin.predict_one(z)).collect()),
            Estimator::Dense(trained) => {
                let z = self.project(layout_version, rows)?;
                let flat: Vec<f64> = z.iter().flatten().copied().collect();
                Ok(trained.predict(&flat, rows.len()))
            }
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(s)?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported bundle format {}", b.format_version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}
