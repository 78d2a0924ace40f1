//! Estimators: OLS, the dense regressor/classifier and the heart-rate ratio
//! equation, plus the bundle format that persists them.

pub mod bundle;
pub mod dense;
pub mod equation;
pub mod linear;
pub mod train;

pub use bundle::{BundleMetadata, Estimator, ModelBundle};
pub use dense::{Architecture, DenseNet, Head, Mode};
pub use equation::{equation_baseline, hr_max, EquationModel};
pub use linear::{fit_linear, LinearModel};
pub use train::{train_dense, ModelKind, TrainConfig, TrainedNet, TrainingHistory};
