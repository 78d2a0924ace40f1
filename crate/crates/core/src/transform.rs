//! Standard scaling followed by PCA, fit on training rows only.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of total variance the retained components must explain.
pub const VARIANCE_TO_KEEP: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    pub layout_version: String,
    /// Length of the raw feature vectors this transform accepts.
    pub input_len: usize,
    /// Columns of the raw vector that are used, in order.
    pub feature_indices: Vec<usize>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `k` rows, each a unit-norm principal axis over the selected columns.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the (population) covariance of the scaled data.
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub k: usize,
    /// Selected columns with zero variance on the training data (scale 1).
    pub constant_features: Vec<usize>,
}

impl FittedTransform {
    /// Fit on training rows using the selected raw columns.
    pub fn fit(rows: &[&[f64]], layout_version: &str, feature_indices: &[usize]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::Fit(format!("need at least 2 training rows, got {}", rows.len())));
        }
        let input_len = rows[0].len();
        if rows.iter().any(|r| r.len() != input_len) {
            return Err(Error::Fit("training rows have inconsistent lengths".into()));
        }
        if feature_indices.is_empty() || feature_indices.iter().any(|&i| i >= input_len) {
            return Err(Error::Fit("feature selection is empty or out of range".into()));
        }
        let n = rows.len();
        let d = feature_indices.len();
        let nf = n as f64;

        let mut mean = vec![0.0; d];
        for r in rows {
            for (j, &c) in feature_indices.iter().enumerate() {
                mean[j] += r[c];
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut scale = vec![0.0; d];
        for r in rows {
            for (j, &c) in feature_indices.iter().enumerate() {
                scale[j] += (r[c] - mean[j]).powi(2);
            }
        }
        let mut constant_features = Vec::new();
        for (j, s) in scale.iter_mut().enumerate() {
            *s = (*s / nf).sqrt();
            if !(*s > 0.0) {
                log::warn!("feature column {} is constant on the training data; scale set to 1", feature_indices[j]);
                constant_features.push(feature_indices[j]);
                *s = 1.0;
            }
        }

        let z = DMatrix::from_fn(n, d, |i, j| (rows[i][feature_indices[j]] - mean[j]) / scale[j]);
        let cov = (z.transpose() * &z) / nf;
        let eig = SymmetricEigen::new(cov);

        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
        let total: f64 = eigenvalues.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Fit("training data has no variance".into()));
        }
        let mut k = d;
        let mut cumulative = 0.0;
        for (i, ev) in eigenvalues.iter().enumerate() {
            cumulative += ev;
            if cumulative / total >= VARIANCE_TO_KEEP {
                k = i + 1;
                break;
            }
        }

        let mut components = Vec::with_capacity(k);
        for &col in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let pivot = v.iter().enumerate().fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
            if v[pivot] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
        }

        Ok(FittedTransform {
            layout_version: layout_version.to_string(),
            input_len,
            feature_indices: feature_indices.to_vec(),
            mean,
            scale,
            components,
            explained_variance: eigenvalues[..k].to_vec(),
            explained_variance_ratio: eigenvalues[..k].iter().map(|e| e / total).collect(),
            k,
            constant_features,
        })
    }

    pub fn check_layout(&self, layout_version: &str, len: usize) -> Result<()> {
        if layout_version != self.layout_version || len != self.input_len {
            return Err(Error::LayoutMismatch {
                expected: format!("{} ({} features)", self.layout_version, self.input_len),
                found: format!("{layout_version} ({len} features)"),
            });
        }
        Ok(())
    }

    /// Project one raw vector: `C * ((x - mean) / scale)`.
    pub fn apply_one(&self, raw: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self
            .feature_indices
            .iter()
            .enumerate()
            .map(|(j, &c)| (raw[c] - self.mean[j]) / self.scale[j])
            .collect();
        self.components.iter().map(|comp| comp.iter().zip(&z).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn apply(&self, layout_version: &str, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        for r in rows {
            self.check_layout(layout_version, r.len())?;
        }
        Ok(rows.iter().map(|r| self.apply_one(r)).collect())
    }

    /// Map a projected vector back to the scaled feature space.
    pub fn reconstruct_scaled(&self, projected: &[f64]) -> Vec<f64> {
        let d = self.feature_indices.len();
        let mut out = vec![0.0; d];
        for (comp, y) in self.components.iter().zip(projected) {
            for (o, c) in out.iter_mut().zip(comp) {
                *o += c * y;
            }
        }
        out
    }

    pub fn output_dim(&self) -> usize {
        self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Cyclic Jacobi eigenvalue sweep, independent of the library solver.
    fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
            if off < 1e-22 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        ev.sort_by(|x, y| y.total_cmp(x));
        ev
    }

    fn random_rows(n: usize, d: usize, s: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(s, "rows", 0);
        (0..n)
            .map(|_| (0..d).map(|j| (j as f64 + 1.0) * rng.sample::<f64, _>(StandardNormal) + j as f64).collect())
            .collect()
    }

    fn refs(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(|r| r.as_slice()).collect()
    }

    fn all(d: usize) -> Vec<usize> {
        (0..d).collect()
    }

    fn orthonormality_error(t: &FittedTransform) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in t.components.iter().enumerate() {
            for (j, b) in t.components.iter().enumerate() {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }

    #[test]
    fn fewer_than_two_rows_is_an_error() {
        let rows = random_rows(1, 3, 1);
        assert!(matches!(FittedTransform::fit(&refs(&rows), "v", &all(3)), Err(Error::Fit(_))));
    }

    #[test]
    fn isotropic_full_rank_keeps_everything() {
        let rows = random_rows(5000, 68, 2);
        let t = FittedTransform::fit(&refs(&rows), "v", &all(68)).unwrap();
        assert_eq!(t.k, 68);
        assert!(orthonormality_error(&t) < 1e-8);
    }

    #[test]
    fn duplicated_columns_reduce_rank() {
        let base = random_rows(600, 48, 3);
        let rows: Vec<Vec<f64>> =
            base.iter().map(|r| r.iter().copied().chain(r.iter().take(20).map(|x| 2.0 * x + 1.0)).collect()).collect();
        let t = FittedTransform::fit(&refs(&rows), "v", &all(68)).unwrap();
        assert!(t.k <= 48, "k = {}", t.k);

        // oracle: count of Jacobi eigenvalues needed for the same threshold
        let n = rows.len() as f64;
        let z: Vec<Vec<f64>> = (0..68)
            .map(|j| {
                let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                let m = col.iter().sum::<f64>() / n;
                let s = (col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
                col.iter().map(|x| (x - m) / s).collect()
            })
            .collect();
        let cov: Vec<Vec<f64>> =
            (0..68).map(|a| (0..68).map(|b| z[a].iter().zip(&z[b]).map(|(x, y)| x * y).sum::<f64>() / n).collect()).collect();
        let ev = jacobi_eigenvalues(cov);
        let total: f64 = ev.iter().map(|e| e.max(0.0)).sum();
        let mut acc = 0.0;
        let oracle_k = ev.iter().position(|e| {
            acc += e.max(0.0);
            acc / total >= VARIANCE_TO_KEEP
        });
        assert_eq!(Some(t.k - 1), oracle_k);
        assert!(t.explained_variance_ratio.iter().sum::<f64>() >= VARIANCE_TO_KEEP);
        assert!(orthonormality_error(&t) < 1e-8);
    }

    #[test]
    fn refit_is_bitwise_identical() {
        let rows = random_rows(300, 10, 4);
        let a = serde_json::to_vec(&FittedTransform::fit(&refs(&rows), "v", &all(10)).unwrap()).unwrap();
        let b = serde_json::to_vec(&FittedTransform::fit(&refs(&rows), "v", &all(10)).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn component_variances_equal_explained_variance() {
        let rows = random_rows(800, 12, 5);
        let t = FittedTransform::fit(&refs(&rows), "v", &all(12)).unwrap();
        let y = t.apply("v", &refs(&rows)).unwrap();
        let n = y.len() as f64;
        for c in 0..t.k {
            let m = y.iter().map(|r| r[c]).sum::<f64>() / n;
            let v = y.iter().map(|r| (r[c] - m).powi(2)).sum::<f64>() / n;
            assert!((v - t.explained_variance[c]).abs() < 1e-6, "{c}: {v} vs {}", t.explained_variance[c]);
        }
    }

    #[test]
    fn mean_vector_maps_to_zero() {
        let rows = random_rows(200, 6, 6);
        let t = FittedTransform::fit(&refs(&rows), "v", &all(6)).unwrap();
        let mean: Vec<f64> = (0..6).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / 200.0).collect();
        assert!(t.apply_one(&mean).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn reconstruction_error_is_tiny() {
        let base = random_rows(400, 20, 7);
        let rows: Vec<Vec<f64>> = base.iter().map(|r| r.iter().copied().chain([r[0] + r[1], r[2] - r[3]]).collect()).collect();
        let t = FittedTransform::fit(&refs(&rows), "v", &all(22)).unwrap();
        let total: f64 = 22.0; // scaled data has unit variance per column
        let mut err = 0.0;
        for r in &rows {
            let z: Vec<f64> = (0..22).map(|j| (r[j] - t.mean[j]) / t.scale[j]).collect();
            let back = t.reconstruct_scaled(&t.apply_one(r));
            err += z.iter().zip(&back).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        err /= rows.len() as f64;
        assert!(err <= (1.0 - VARIANCE_TO_KEEP) * total, "{err}");
    }

    #[test]
    fn constant_feature_gets_unit_scale() {
        let mut rows = random_rows(50, 4, 8);
        rows.iter_mut().for_each(|r| r[2] = 3.0);
        let t = FittedTransform::fit(&refs(&rows), "v", &all(4)).unwrap();
        assert_eq!(t.scale[2], 1.0);
        assert_eq!(t.constant_features, vec![2]);
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let rows = random_rows(50, 4, 9);
        let t = FittedTransform::fit(&refs(&rows), "v", &all(4)).unwrap();
        assert!(matches!(t.apply("other", &refs(&rows)), Err(Error::LayoutMismatch { .. })));
        assert!(t.apply("v", &[&[1.0, 2.0][..]]).is_err());
    }

    #[test]
    fn test_rows_never_influence_the_fit() {
        let train = random_rows(100, 5, 10);
        let t1 = FittedTransform::fit(&refs(&train), "v", &all(5)).unwrap();
        let mut test = random_rows(30, 5, 11);
        let _ = t1.apply("v", &refs(&test)).unwrap();
        test[0][0] = 1e9;
        let _ = t1.apply("v", &refs(&test)).unwrap();
        let t2 = FittedTransform::fit(&refs(&train), "v", &all(5)).unwrap();
        assert_eq!(t1, t2);
    }

    proptest! {
        #[test]
        fn apply_is_linear_on_centered_inputs(a in -3.0f64..3.0, b in -3.0f64..3.0, i in 0usize..40, j in 0usize..40) {
            let rows = random_rows(40, 6, 12);
            let t = FittedTransform::fit(&refs(&rows), "v", &all(6)).unwrap();
            let center = |r: &[f64]| -> Vec<f64> { r.iter().zip(&t.mean).map(|(x, m)| x - m).collect() };
            let (x, y) = (center(&rows[i]), center(&rows[j]));
            let combo: Vec<f64> = x.iter().zip(&y).zip(&t.mean).map(|((p, q), m)| a * p + b * q + m).collect();
            let lhs = t.apply_one(&combo);
            let px = t.apply_one(&rows[i]);
            let py = t.apply_one(&rows[j]);
            for c in 0..t.k {
                prop_assert!((lhs[c] - (a * px[c] + b * py[c])).abs() < 1e-9);
            }
        }
    }
}
