use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Numerical rank of the design matrix including the intercept column.
    pub rank: usize,
}

impl LinearModel {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coefficients.len() + 1
    }
}

/// Ordinary least squares with an intercept, solved through the SVD
/// pseudoinverse so collinear designs still give the minimum-norm solution.
pub fn fit_linear(x: &[Vec<f64>], y: &[f64]) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let n = x.len();
    let p = x.first().map(Vec::len).ok_or_else(|| Error::Fit("no rows to fit".into()))?;
    if x.iter().any(|r| r.len() != p) {
        return Err(Error::Fit("rows have inconsistent widths".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite values in regression data".into()));
    }
    if n < p + 1 {
        warn!("fitting {} coefficients from {n} rows", p + 1);
    }
    let design = DMatrix::from_fn(n, p + 1, |r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
    let target = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * f64::EPSILON * n.max(p + 1) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p + 1 {
        warn!("design matrix is rank deficient ({rank} of {}); using the pseudoinverse solution", p + 1);
    }
    let beta = svd.solve(&target, tol).map_err(|e| Error::Fit(e.to_string()))?;
    Ok(LinearModel { intercept: beta[0], coefficients: beta.iter().skip(1).copied().collect(), rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_line() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.5]).collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] + 1.0).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-9);
        assert!((m.intercept - 1.0).abs() < 1e-9);
        assert!(!m.is_rank_deficient());
    }

    #[test]
    fn noise_target_has_no_explained_variance() {
        let mut rng = seed::rng(1, "ols-noise", 0);
        let n = 10_000;
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let m = fit_linear(&x, &y).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let ss_res: f64 = x.iter().zip(&y).map(|(r, t)| (t - m.predict_one(r)).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
        assert!((1.0 - ss_res / ss_tot).abs() < 0.05);
    }

    #[test]
    fn duplicate_columns_give_finite_minimum_norm_fit() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..20).map(|i| 4.0 * i as f64 + 2.0).collect();
        let m = fit_linear(&x, &y).unwrap();
        assert!(m.is_rank_deficient());
        assert!(m.coefficients.iter().all(|c| c.is_finite()));
        // the weight is split evenly between the identical columns
        assert!((m.coefficients[0] - 2.0).abs() < 1e-8 && (m.coefficients[1] - 2.0).abs() < 1e-8);
        assert!((m.predict_one(&[3.0, 3.0]) - 14.0).abs() < 1e-8);
    }

    #[test]
    fn matches_normal_equations_on_random_data() {
        let mut rng = seed::rng(2, "ols", 0);
        let x: Vec<Vec<f64>> = (0..50).map(|_| (0..2).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0] - 0.5 * r[1] + rng.sample::<f64, _>(StandardNormal)).collect();
        let m = fit_linear(&x, &y).unwrap();
        // residuals are orthogonal to every design column
        let res: Vec<f64> = x.iter().zip(&y).map(|(r, t)| t - m.predict_one(r)).collect();
        assert!(res.iter().sum::<f64>().abs() < 1e-9);
        for j in 0..2 {
            assert!(res.iter().zip(&x).map(|(e, r)| e * r[j]).sum::<f64>().abs() < 1e-9);
        }
    }
}
