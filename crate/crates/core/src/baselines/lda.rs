use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{axpy, cholesky, cholesky_solve, dot, Matrix};

/// Feature count above which the `d x d` covariance is refused.
pub const MAX_FEATURES: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdaHyper {
    /// Ridge added to the pooled covariance, relative to `trace / d`.
    pub ridge_scale: f64,
}

impl Default for LdaHyper {
    fn default() -> Self {
        LdaHyper { ridge_scale: 1e-6 }
    }
}

/// Linear discriminant analysis: Gaussian classes sharing one covariance.
///
/// Stored in discriminant form, `score_k(x) = coef_k . x + intercept_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lda {
    pub hyper: LdaHyper,
    coef: Matrix,
    intercept: Vec<f64>,
}

impl Lda {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: LdaHyper) -> Result<Self> {
        check_training(x, y, n_classes)?;
        let (n, d) = x.shape();
        if n <= n_classes {
            return Err(Error::InvalidArgument(format!(
                "LDA needs more samples ({n}) than classes ({n_classes})"
            )));
        }
        if d > MAX_FEATURES {
            return Err(Error::InvalidArgument(format!(
                "LDA on {d} features is too large; reduce with PCA first"
            )));
        }

        let mut counts = vec![0usize; n_classes];
        let mut means = Matrix::zeros(n_classes, d);
        for (row, &l) in x.iter_rows().zip(y) {
            counts[l] += 1;
            axpy(1.0, row, means.row_mut(l));
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                means.row_mut(c).iter_mut().for_each(|m| *m /= cnt as f64);
            }
        }

        let mut cov = Matrix::zeros(d, d);
        let mut diff = vec![0.0; d];
        for (row, &l) in x.iter_rows().zip(y) {
            for ((t, a), m) in diff.iter_mut().zip(row).zip(means.row(l)) {
                *t = a - m;
            }
            for a in 0..d {
                if diff[a] != 0.0 {
                    axpy(diff[a], &diff, cov.row_mut(a));
                }
            }
        }
        let denom = (n - counts.iter().filter(|&&c| c > 0).count()) as f64;
        cov.data_mut().iter_mut().for_each(|v| *v /= denom);
        let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
        let mut ridge = hyper.ridge_scale * trace / d as f64;
        if ridge <= 0.0 {
            ridge = hyper.ridge_scale.max(f64::MIN_POSITIVE);
        }
        for i in 0..d {
            cov.set(i, i, cov.get(i, i) + ridge);
        }
        let l = cholesky(&cov)?;

        let mut coef = Matrix::zeros(n_classes, d);
        let mut intercept = vec![f64::NEG_INFINITY; n_classes];
        for c in 0..n_classes {
            if counts[c] == 0 {
                continue;
            }
            let a = cholesky_solve(&l, means.row(c));
            intercept[c] = -0.5 * dot(&a, means.row(c)) + (counts[c] as f64 / n as f64).ln();
            coef.row_mut(c).copy_from_slice(&a);
        }
        Ok(Lda {
            hyper,
            coef,
            intercept,
        })
    }

    pub fn decision_function(&self, x: &Matrix) -> Result<Matrix> {
        check_query(x, self.n_features())?;
        let mut s = x.matmul_t(&self.coef)?;
        for i in 0..s.rows() {
            for (v, b) in s.row_mut(i).iter_mut().zip(&self.intercept) {
                *v += b;
            }
        }
        Ok(s)
    }
}

impl Classifier for Lda {
    fn n_classes(&self) -> usize {
        self.intercept.len()
    }

    fn n_features(&self) -> usize {
        self.coef.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        Ok(ProbMatrix::from_logits(self.decision_function(x)?))
    }
}

impl Persist for Lda {
    const KIND: ClassifierKind = ClassifierKind::Lda;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hyper": self.hyper,
            "n_classes": self.n_classes(),
            "n_features": self.n_features(),
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![self.coef.data().to_vec(), self.intercept.clone()]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let c: usize = header_field(h, "n_classes")?;
        let d: usize = header_field(h, "n_features")?;
        expect_blobs(blobs, &[c * d, c])?;
        Ok(Lda {
            hyper: header_field(h, "hyper")?,
            coef: Matrix::new(c, d, blobs[0].clone())?,
            intercept: blobs[1].clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn symmetric_midpoint_is_even() {
        let x = Matrix::from_rows(&[[-2.0, 0.5], [-1.0, -0.5], [1.0, 0.5], [2.0, -0.5]]).unwrap();
        let m = Lda::fit(&x, &[0, 0, 1, 1], 2, LdaHyper::default()).unwrap();
        let p = m.predict_proba(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
        assert!((p.row(0)[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_ratio_is_affine() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[2.0, 1.0]], 10, 1.0, 9);
        let m = Lda::fit(&x, &y, 2, LdaHyper::default()).unwrap();
        let q = Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.5], [2.0, 1.0]]).unwrap();
        let p = m.predict_proba(&q).unwrap();
        let r: Vec<f64> = (0..3).map(|i| (p.row(i)[1] / p.row(i)[0]).ln()).collect();
        assert!(((r[1] - r[0]) - (r[2] - r[1])).abs() < 1e-9);
    }

    /// Posterior from full Gaussian densities with the shared covariance,
    /// computed with an independent linear algebra library.
    #[test]
    fn three_class_posterior_matches_density_oracle() {
        let (x, y) = blobs(&[&[0.0, 0.0, 0.0], &[1.5, 0.0, 1.0], &[0.0, 2.0, -1.0]], 7, 1.2, 21);
        let (n, d, c) = (x.rows(), 3, 3);
        let m = Lda::fit(&x, &y, c, LdaHyper::default()).unwrap();

        let xs = DMatrix::from_row_slice(n, d, x.data());
        let mut means = vec![DVector::zeros(d); c];
        let mut counts = vec![0.0; c];
        for i in 0..n {
            means[y[i]] += xs.row(i).transpose();
            counts[y[i]] += 1.0;
        }
        for k in 0..c {
            means[k] /= counts[k];
        }
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..n {
            let r = xs.row(i).transpose() - &means[y[i]];
            cov += &r * r.transpose();
        }
        cov /= (n - c) as f64;
        let ridge = 1e-6 * cov.trace() / d as f64;
        cov += DMatrix::identity(d, d) * ridge;
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();

        let q = random_matrix(6, 3, 22);
        let p = m.predict_proba(&q).unwrap();
        for i in 0..6 {
            let qi = DVector::from_row_slice(q.row(i));
            let dens: Vec<f64> = (0..c)
                .map(|k| {
                    let r = &qi - &means[k];
                    let maha = (r.transpose() * &inv * &r)[(0, 0)];
                    let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
                    counts[k] / n as f64 * (-0.5 * maha).exp() / norm
                })
                .collect();
            let total: f64 = dens.iter().sum();
            for k in 0..c {
                assert!((p.row(i)[k] - dens[k] / total).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn label_permutation_and_persist() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.0]], 8, 0.8, 5);
        let perm = [2, 1, 0];
        let a = Lda::fit(&x, &y, 3, LdaHyper::default()).unwrap();
        let b = Lda::fit(&x, &permute(&y, &perm), 3, LdaHyper::default()).unwrap();
        let q = random_matrix(10, 2, 6);
        assert_columns_permuted(&a.predict_proba(&q).unwrap(), &b.predict_proba(&q).unwrap(), &perm, 1e-9);
        assert_eq!(Lda::from_file(&a.to_file()).unwrap(), a);
    }

    #[test]
    fn needs_more_samples_than_classes() {
        let x = random_matrix(2, 2, 1);
        assert!(Lda::fit(&x, &[0, 1], 2, LdaHyper::default()).is_err());
    }
}
