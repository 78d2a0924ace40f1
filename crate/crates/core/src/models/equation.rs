use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureLayout;

/// Age-predicted maximal heart rate (Tanaka).
pub fn hr_max(age: f64) -> f64 {
    208.0 - 0.7 * age
}

/// Uth estimate in ml O2/min/kg: `15 * HRmax / HRrest`.
pub fn equation_baseline(age: f64, rhr: f64) -> Result<f64> {
    if !(rhr > 0.0) || !age.is_finite() || !rhr.is_finite() {
        return Err(Error::Data(format!("equation baseline needs finite age and positive rhr (got {age}, {rhr})")));
    }
    let hrmax = hr_max(age);
    if hrmax <= 0.0 {
        return Err(Error::Data(format!("age {age} gives a non-positive maximal heart rate")));
    }
    Ok(15.0 * (hrmax / rhr))
}

/// The equation baseline reading age and RHR out of a raw feature vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EquationModel {
    pub age_index: usize,
    pub rhr_index: usize,
}

impl EquationModel {
    pub fn for_layout(layout: &FeatureLayout) -> Result<Self> {
        let find = |name: &str| layout.index_of(name).ok_or_else(|| Error::Config(format!("layout has no `{name}` feature")));
        Ok(EquationModel { age_index: find("age")?, rhr_index: find("rhr")? })
    }

    pub fn predict_one(&self, raw: &[f64]) -> Result<f64> {
        equation_baseline(raw[self.age_index], raw[self.rhr_index])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(equation_baseline(40.0, 60.0).unwrap(), 45.0);
        assert_eq!(hr_max(0.0), 208.0);
        let hm = hr_max(55.0);
        assert_eq!(equation_baseline(55.0, hm).unwrap(), 15.0);
    }

    #[test]
    fn rejects_bad_rhr() {
        assert!(equation_baseline(40.0, 0.0).is_err());
        assert!(equation_baseline(40.0, -3.0).is_err());
        assert!(equation_baseline(40.0, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn decreasing_in_rhr(age in 0.0..120.0f64, rhr in 30.0..120.0f64, step in 0.01..20.0f64) {
            prop_assert!(equation_baseline(age, rhr + step).unwrap() < equation_baseline(age, rhr).unwrap());
        }

        #[test]
        fn decreasing_in_age(age in 0.0..120.0f64, rhr in 30.0..120.0f64, step in 0.01..20.0f64) {
            prop_assert!(equation_baseline(age + step, rhr).unwrap() < equation_baseline(age, rhr).unwrap());
        }
    }
}
