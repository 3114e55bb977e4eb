use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, log_sum_exp, seeded_rng, softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpHyper {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpHyper {
    fn default() -> Self {
        MlpHyper {
            hidden: 128,
            epochs: 25,
            lr: 0.05,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// One hidden ReLU layer, softmax output, cross-entropy loss.
///
/// Hidden weights start He-uniform, `U(-sqrt(6/d), sqrt(6/d))`; the output
/// layer and all biases start at zero, so class labels enter training
/// symmetrically.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hyper: MlpHyper,
    /// `hidden x d`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `c x hidden`
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

/// Gradient with the same layout as [`Mlp::params`].
pub type MlpGrad = Vec<f64>;

impl Mlp {
    pub fn init(n_features: usize, n_classes: usize, hyper: MlpHyper) -> Self {
        Self::init_with(n_features, n_classes, hyper, &mut seeded_rng(hyper.seed))
    }

    fn init_with(n_features: usize, n_classes: usize, hyper: MlpHyper, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / n_features.max(1) as f64).sqrt();
        let w1 = (0..hyper.hidden * n_features)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Mlp {
            hyper,
            w1: Matrix::new(hyper.hidden, n_features, w1).unwrap(),
            b1: vec![0.0; hyper.hidden],
            w2: Matrix::zeros(n_classes, hyper.hidden),
            b2: vec![0.0; n_classes],
        }
    }

    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: MlpHyper) -> Result<Self> {
        check_training(x, y, n_classes)?;
        if hyper.hidden == 0 || hyper.batch_size == 0 || !(hyper.lr > 0.0) {
            return Err(Error::InvalidArgument("hidden, batch size and lr must be positive".into()));
        }
        let mut rng = seeded_rng(hyper.seed);
        let mut model = Mlp::init_with(x.cols(), n_classes, hyper, &mut rng);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        for epoch in 1..=hyper.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for batch in order.chunks(hyper.batch_size) {
                let (loss, grad) = model.loss_and_grad(x, y, batch);
                total += loss * batch.len() as f64;
                let mut params = model.params();
                axpy(-hyper.lr, &grad, &mut params);
                model.set_params(&params);
            }
            if !total.is_finite() {
                return Err(Error::Diverged(format!("MLP loss non-finite in epoch {epoch}")));
            }
        }
        Ok(model)
    }

    /// Flattened parameters: w1, b1, w2, b2.
    pub fn params(&self) -> Vec<f64> {
        [self.w1.data(), &self.b1, self.w2.data(), &self.b2].concat()
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let (h, d, c) = (self.b1.len(), self.w1.cols(), self.b2.len());
        assert_eq!(p.len(), h * d + h + c * h + c);
        let (w1, rest) = p.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        self.w1.data_mut().copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.data_mut().copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
    }

    fn forward_row(&self, xi: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
        for (j, h) in hidden.iter_mut().enumerate() {
            *h = (dot(self.w1.row(j), xi) + self.b1[j]).max(0.0);
        }
        for (k, z) in logits.iter_mut().enumerate() {
            *z = dot(self.w2.row(k), hidden) + self.b2[k];
        }
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[usize], batch: &[usize]) -> (f64, MlpGrad) {
        let (h, d, c) = (self.b1.len(), self.w1.cols(), self.b2.len());
        let mut grad = vec![0.0; h * d + h + c * h + c];
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);
        let mut hidden = vec![0.0; h];
        let mut z = vec![0.0; c];
        let mut dh = vec![0.0; h];
        let mut loss = 0.0;
        for &i in batch {
            let xi = x.row(i);
            self.forward_row(xi, &mut hidden, &mut z);
            loss += log_sum_exp(&z) - z[y[i]];
            softmax_in_place(&mut z);
            z[y[i]] -= 1.0;
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..c {
                axpy(z[k], &hidden, &mut gw2[k * h..(k + 1) * h]);
                gb2[k] += z[k];
                axpy(z[k], self.w2.row(k), &mut dh);
            }
            for j in 0..h {
                if hidden[j] > 0.0 {
                    axpy(dh[j], xi, &mut gw1[j * d..(j + 1) * d]);
                    gb1[j] += dh[j];
                }
            }
        }
        let m = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        (loss / m, grad)
    }
}

impl Classifier for Mlp {
    fn n_classes(&self) -> usize {
        self.b2.len()
    }

    fn n_features(&self) -> usize {
        self.w1.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        check_query(x, self.n_features())?;
        let c = self.n_classes();
        let mut hidden = vec![0.0; self.b1.len()];
        let mut z = Matrix::zeros(x.rows(), c);
        for i in 0..x.rows() {
            self.forward_row(x.row(i), &mut hidden, z.row_mut(i));
        }
        Ok(ProbMatrix::from_logits(z))
    }
}

impl Persist for Mlp {
    const KIND: ClassifierKind = ClassifierKind::Mlp;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hyper": self.hyper,
            "n_classes": self.n_classes(),
            "n_features": self.n_features(),
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![self.params()]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let hyper: MlpHyper = header_field(h, "hyper")?;
        let c: usize = header_field(h, "n_classes")?;
        let d: usize = header_field(h, "n_features")?;
        let hid = hyper.hidden;
        expect_blobs(blobs, &[hid * d + hid + c * hid + c])?;
        let mut m = Mlp {
            hyper,
            w1: Matrix::zeros(hid, d),
            b1: vec![0.0; hid],
            w2: Matrix::zeros(c, hid),
            b2: vec![0.0; c],
        };
        m.set_params(&blobs[0]);
        Ok(m)
    }
}
