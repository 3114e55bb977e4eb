use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, log_sum_exp, seeded_rng, softmax_in_place, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHyper {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        SoftmaxHyper {
            epochs: 25,
            lr: 0.1,
            l2: 1e-4,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// What happened in one epoch of [`Softmax::fit_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutcome {
    /// 1-based.
    pub epoch: usize,
    /// Regularized training loss after the epoch (after any rollback).
    pub loss: f64,
    /// Learning rate the epoch was run with.
    pub lr: f64,
    /// False when the epoch raised the loss and was rolled back.
    pub accepted: bool,
}

/// Multinomial logistic regression: one dense layer followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Softmax {
    pub hyper: SoftmaxHyper,
    /// `n_classes x n_features`.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Softmax {
    pub fn zeros(n_classes: usize, n_features: usize, hyper: SoftmaxHyper) -> Self {
        Softmax {
            hyper,
            weights: Matrix::zeros(n_classes, n_features),
            bias: vec![0.0; n_classes],
        }
    }

    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: SoftmaxHyper) -> Result<Self> {
        Self::fit_with(x, y, n_classes, hyper, |_, _| {})
    }

    /// Mini-batch gradient descent from zero weights.
    ///
    /// After every epoch the full regularized training loss is evaluated. An
    /// epoch that increases it is undone and the learning rate halved, so the
    /// reported loss sequence is nonincreasing. `on_epoch` sees the model as
    /// it stands after each epoch.
    pub fn fit_with<F>(x: &Matrix, y: &[usize], n_classes: usize, hyper: SoftmaxHyper, mut on_epoch: F) -> Result<Self>
    where
        F: FnMut(&EpochOutcome, &Softmax),
    {
        check_training(x, y, n_classes)?;
        if hyper.batch_size == 0 || !(hyper.lr > 0.0) {
            return Err(Error::InvalidArgument("batch size and learning rate must be positive".into()));
        }
        let mut model = Softmax::zeros(n_classes, x.cols(), hyper);
        let mut rng = seeded_rng(hyper.seed);
        let mut order: Vec<usize> = (0..x.rows()).collect();
        let mut lr = hyper.lr;
        let mut best_loss = model.loss(x, y)?;

        for epoch in 1..=hyper.epochs {
            let snapshot = (model.weights.clone(), model.bias.clone());
            order.shuffle(&mut rng);
            for batch in order.chunks(hyper.batch_size) {
                let (_, gw, gb) = model.loss_and_grad(x, y, batch);
                axpy(-lr, &gw, model.weights.data_mut());
                axpy(-lr, &gb, &mut model.bias);
            }
            let loss = model.loss(x, y)?;
            let accepted = loss <= best_loss;
            if accepted {
                best_loss = loss;
            } else {
                model.weights = snapshot.0;
                model.bias = snapshot.1;
            }
            on_epoch(
                &EpochOutcome {
                    epoch,
                    loss: best_loss,
                    lr,
                    accepted,
                },
                &model,
            );
            if !accepted {
                lr *= 0.5;
            }
        }
        Ok(model)
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        check_query(x, self.weights.cols())?;
        let mut z = x.matmul_t(&self.weights)?;
        for i in 0..z.rows() {
            for (v, b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }

    /// Mean cross-entropy plus `l2 / 2 * |W|^2`. Errors if non-finite.
    pub fn loss(&self, x: &Matrix, y: &[usize]) -> Result<f64> {
        let z = self.logits(x)?;
        let ce: f64 = y
            .iter()
            .enumerate()
            .map(|(i, &l)| log_sum_exp(z.row(i)) - z.row(i)[l])
            .sum::<f64>()
            / y.len() as f64;
        let loss = ce + 0.5 * self.hyper.l2 * dot(self.weights.data(), self.weights.data());
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("softmax training loss became {loss}")));
        }
        Ok(loss)
    }

    /// Regularized loss on the rows in `batch` and its gradient with respect
    /// to the weights (row-major, like `weights`) and the bias.
    pub fn loss_and_grad(&self, x: &Matrix, y: &[usize], batch: &[usize]) -> (f64, Vec<f64>, Vec<f64>) {
        let (c, d) = self.weights.shape();
        let mut gw = vec![0.0; c * d];
        let mut gb = vec![0.0; c];
        let mut loss = 0.0;
        let mut p = vec![0.0; c];
        for &i in batch {
            let xi = x.row(i);
            for k in 0..c {
                p[k] = dot(self.weights.row(k), xi) + self.bias[k];
            }
            loss += log_sum_exp(&p) - p[y[i]];
            softmax_in_place(&mut p);
            p[y[i]] -= 1.0;
            for k in 0..c {
                axpy(p[k], xi, &mut gw[k * d..(k + 1) * d]);
                gb[k] += p[k];
            }
        }
        let m = batch.len() as f64;
        gw.iter_mut().for_each(|g| *g /= m);
        gb.iter_mut().for_each(|g| *g /= m);
        axpy(self.hyper.l2, self.weights.data(), &mut gw);
        loss = loss / m + 0.5 * self.hyper.l2 * dot(self.weights.data(), self.weights.data());
        (loss, gw, gb)
    }
}

impl Classifier for Softmax {
    fn n_classes(&self) -> usize {
        self.bias.len()
    }

    fn n_features(&self) -> usize {
        self.weights.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        Ok(ProbMatrix::from_logits(self.logits(x)?))
    }
}

impl Persist for Softmax {
    const KIND: ClassifierKind = ClassifierKind::Softmax;

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
        Ok(Softmax {
            hyper: header_field(h, "hyper")?,
            weights: Matrix::new(c, d, blobs[0].clone())?,
            bias: blobs[1].clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use rand::Rng;

    /// Perceptron run to convergence certifies linear separability.
    fn perceptron_separates(x: &Matrix, y: &[usize]) -> bool {
        let d = x.cols();
        let mut w = vec![0.0; d + 1];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for (row, &l) in x.iter_rows().zip(y) {
                let s = if l == 1 { 1.0 } else { -1.0 };
                let m = dot(&w[..d], row) + w[d];
                if s * m <= 0.0 {
                    axpy(s, row, &mut w[..d]);
                    w[d] += s;
                    mistakes += 1;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = Softmax::zeros(4, 3, SoftmaxHyper::default());
        let p = m.predict_proba(&random_matrix(5, 3, 1)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let (x, y) = blobs(&[&[-1.0, -1.0], &[1.0, 1.5]], 20, 0.7, 4);
        assert!(perceptron_separates(&x, &y));
        let hyper = SoftmaxHyper { epochs: 200, lr: 0.5, l2: 0.0, ..Default::default() };
        let m = Softmax::fit(&x, &y, 2, hyper).unwrap();
        assert_eq!(super::super::accuracy(&m.predict(&x).unwrap(), &y), 1.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = blobs(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]], 5, 1.0, 8);
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut rng = crate::numerics::seeded_rng(99);
        let h = 1e-5;
        for point in 0..10 {
            let mut m = Softmax::zeros(3, 3, SoftmaxHyper { l2: 0.01, ..Default::default() });
            m.weights.data_mut().iter_mut().for_each(|w| *w = rng.random_range(-2.0..2.0));
            m.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            let (_, gw, gb) = m.loss_and_grad(&x, &y, &rows);
            let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
            for (j, &a) in analytic.iter().enumerate() {
                let bump = |m: &mut Softmax, delta: f64| {
                    if j < 9 {
                        m.weights.data_mut()[j] += delta;
                    } else {
                        m.bias[j - 9] += delta;
                    }
                };
                let mut plus = m.clone();
                bump(&mut plus, h);
                let mut minus = m.clone();
                bump(&mut minus, -h);
                let numeric = (plus.loss_and_grad(&x, &y, &rows).0 - minus.loss_and_grad(&x, &y, &rows).0) / (2.0 * h);
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-6, "point {point} param {j}: {a} vs {numeric}");
            }
        }
    }

    #[test]
    fn loss_never_increases_across_epochs() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[0.5, 0.5], &[1.0, 0.0]], 15, 1.0, 2);
        let mut losses = vec![];
        let hyper = SoftmaxHyper { lr: 5.0, epochs: 30, ..Default::default() };
        Softmax::fit_with(&x, &y, 3, hyper, |o, _| losses.push(o.loss)).unwrap();
        assert_eq!(losses.len(), 30);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic_and_diverges_on_bad_input() {
        let (x, y) = blobs(&[&[0.0], &[1.0]], 10, 0.6, 3);
        let a = Softmax::fit(&x, &y, 2, SoftmaxHyper::default()).unwrap();
        let b = Softmax::fit(&x, &y, 2, SoftmaxHyper::default()).unwrap();
        assert_eq!(a, b);
        let huge = Matrix::from_rows(&[[1e300], [-1e300]]).unwrap();
        let hyper = SoftmaxHyper { lr: 1.0, l2: 1.0, ..Default::default() };
        let r = Softmax::fit(&huge, &[0, 1], 2, hyper);
        assert!(matches!(r, Err(Error::Diverged(_))), "{r:?}");
    }

    #[test]
    fn label_permutation_and_persist() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.0]], 8, 0.8, 5);
        let perm = [1, 2, 0];
        let a = Softmax::fit(&x, &y, 3, SoftmaxHyper::default()).unwrap();
        let b = Softmax::fit(&x, &permute(&y, &perm), 3, SoftmaxHyper::default()).unwrap();
        let q = random_matrix(10, 2, 6);
        let pa = a.predict_proba(&q).unwrap();
        assert_stochastic(&pa);
        assert_columns_permuted(&pa, &b.predict_proba(&q).unwrap(), &perm, 1e-9);
        assert_eq!(Softmax::from_file(&a.to_file()).unwrap(), a);
    }
}
