use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, Classifier, ProbMatrix};
use crate::error::Result;
use crate::numerics::{Matrix, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GnbHyper {
    /// Added to every variance, as a fraction of the largest feature variance.
    pub var_smoothing: f64,
}

impl Default for GnbHyper {
    fn default() -> Self {
        GnbHyper { var_smoothing: 1e-9 }
    }
}

/// Gaussian naive Bayes with empirical class priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gnb {
    pub hyper: GnbHyper,
    means: Matrix,
    vars: Matrix,
    log_priors: Vec<f64>,
}

impl Gnb {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: GnbHyper) -> Result<Self> {
        check_training(x, y, n_classes)?;
        let (n, d) = x.shape();

        let mut overall_mean = vec![0.0; d];
        for row in x.iter_rows() {
            crate::numerics::axpy(1.0, row, &mut overall_mean);
        }
        overall_mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut max_var: f64 = 0.0;
        for j in 0..d {
            let v = x.iter_rows().map(|r| (r[j] - overall_mean[j]).powi(2)).sum::<f64>() / n as f64;
            max_var = max_var.max(v);
        }
        let mut epsilon = hyper.var_smoothing * max_var;
        if epsilon <= 0.0 {
            epsilon = hyper.var_smoothing.max(f64::MIN_POSITIVE);
        }

        let mut counts = vec![0usize; n_classes];
        let mut means = Matrix::zeros(n_classes, d);
        for (row, &l) in x.iter_rows().zip(y) {
            counts[l] += 1;
            crate::numerics::axpy(1.0, row, means.row_mut(l));
        }
        for (c, &cnt) in counts.iter().enumerate() {
            if cnt > 0 {
                means.row_mut(c).iter_mut().for_each(|m| *m /= cnt as f64);
            }
        }
        let mut vars = Matrix::zeros(n_classes, d);
        for (row, &l) in x.iter_rows().zip(y) {
            let mu = means.row(l).to_vec();
            for ((v, xi), m) in vars.row_mut(l).iter_mut().zip(row).zip(&mu) {
                *v += (xi - m) * (xi - m);
            }
        }
        for (c, &cnt) in counts.iter().enumerate() {
            vars.row_mut(c).iter_mut().for_each(|v| {
                *v = if cnt > 0 { *v / cnt as f64 } else { 0.0 } + epsilon;
            });
        }
        let log_priors = counts
            .iter()
            .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n as f64).ln() })
            .collect();
        Ok(Gnb {
            hyper,
            means,
            vars,
            log_priors,
        })
    }

    fn joint_log_likelihood(&self, q: &[f64]) -> Vec<f64> {
        (0..self.log_priors.len())
            .map(|c| {
                let mut ll = self.log_priors[c];
                for ((x, m), v) in q.iter().zip(self.means.row(c)).zip(self.vars.row(c)) {
                    ll -= 0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v);
                }
                ll
            })
            .collect()
    }
}

impl Classifier for Gnb {
    fn n_classes(&self) -> usize {
        self.log_priors.len()
    }

    fn n_features(&self) -> usize {
        self.means.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        check_query(x, self.n_features())?;
        let mut out = Vec::with_capacity(x.rows() * self.n_classes());
        for q in x.iter_rows() {
            let mut jll = self.joint_log_likelihood(q);
            softmax_in_place(&mut jll);
            out.extend(jll);
        }
        Ok(ProbMatrix::from_rows_unchecked(x.rows(), self.n_classes(), out))
    }
}

impl Persist for Gnb {
    const KIND: ClassifierKind = ClassifierKind::Gnb;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hyper": self.hyper,
            "n_classes": self.n_classes(),
            "n_features": self.n_features(),
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![
            self.means.data().to_vec(),
            self.vars.data().to_vec(),
            self.log_priors.clone(),
        ]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let c: usize = header_field(h, "n_classes")?;
        let d: usize = header_field(h, "n_features")?;
        expect_blobs(blobs, &[c * d, c * d, c])?;
        Ok(Gnb {
            hyper: header_field(h, "hyper")?,
            means: Matrix::new(c, d, blobs[0].clone())?,
            vars: Matrix::new(c, d, blobs[1].clone())?,
            log_priors: blobs[2].clone(),
        })
    }
}
