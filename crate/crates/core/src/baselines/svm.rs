use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, require_two_classes, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, seeded_rng, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmHyper {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmHyper {
    fn default() -> Self {
        SvmHyper {
            lambda: 1e-4,
            epochs: 25,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM trained with Pegasos stochastic subgradient steps.
///
/// The bias is treated as the weight of a constant feature and is
/// regularized with the rest. Probabilities are a softmax over the
/// per-class margins; this is a ranking-preserving convention, not a
/// calibrated estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub hyper: SvmHyper,
    /// `n_classes x n_features`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearSvm {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: SvmHyper) -> Result<Self> {
        check_training(x, y, n_classes)?;
        require_two_classes(y)?;
        if !(hyper.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be positive".into()));
        }
        let d = x.cols();
        let mut weights = Matrix::zeros(n_classes, d);
        let mut bias = vec![0.0; n_classes];
        let radius_sq = 1.0 / hyper.lambda;
        let mut rng = seeded_rng(hyper.seed);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut t = 0u64;
        for _ in 0..hyper.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (hyper.lambda * t as f64);
                let shrink = 1.0 - eta * hyper.lambda;
                let xi = x.row(i);
                for k in 0..n_classes {
                    let target = if y[i] == k { 1.0 } else { -1.0 };
                    let w = weights.row_mut(k);
                    let margin = dot(w, xi) + bias[k];
                    w.iter_mut().for_each(|v| *v *= shrink);
                    bias[k] *= shrink;
                    if target * margin < 1.0 {
                        axpy(eta * target, xi, w);
                        bias[k] += eta * target;
                    }
                    let norm_sq = dot(w, w) + bias[k] * bias[k];
                    if norm_sq > radius_sq {
                        let s = (radius_sq / norm_sq).sqrt();
                        w.iter_mut().for_each(|v| *v *= s);
                        bias[k] *= s;
                    }
                }
            }
            if !weights.is_finite() {
                return Err(Error::Diverged("SVM weights became non-finite".into()));
            }
        }
        Ok(LinearSvm { hyper, weights, bias })
    }

    /// Signed distance-like score of every row against every class.
    pub fn margins(&self, x: &Matrix) -> Result<Matrix> {
        check_query(x, self.weights.cols())?;
        let mut m = x.matmul_t(&self.weights)?;
        for i in 0..m.rows() {
            for (v, b) in m.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(m)
    }
}

impl Classifier for LinearSvm {
    fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn n_features(&self) -> usize {
        self.weights.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        Ok(ProbMatrix::from_logits(self.margins(x)?))
    }
}

impl Persist for LinearSvm {
    const KIND: ClassifierKind = ClassifierKind::LinearSvm;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hyper": self.hyper,
            "n_classes": self.n_classes(),
            "n_features": self.n_features(),
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![self.weights.data().to_vec(), self.bias.clone()]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let c: usize = header_field(h, "n_classes")?;
        let d: usize = header_field(h, "n_features")?;
        expect_blobs(blobs, &[c * d, c])?;
        Ok(LinearSvm {
            hyper: header_field(h, "hyper")?,
            weights: Matrix::new(c, d, blobs[0].clone())?,
            bias: blobs[1].clone(),
        })
    }
}
