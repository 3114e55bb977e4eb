//! Comparison classifiers built from scratch, all behind [`Classifier`].

pub mod container;
pub mod gnb;
pub mod knn;
pub mod lda;
pub mod mlp;
pub mod softmax;
pub mod svm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, Matrix};

pub use container::{ClassifierKind, ModelFile};
pub use gnb::{Gnb, GnbHyper};
pub use knn::{Knn, KnnHyper};
pub use lda::{Lda, LdaHyper};
pub use mlp::{Mlp, MlpHyper};
pub use softmax::{Softmax, SoftmaxHyper};
pub use svm::{LinearSvm, SvmHyper};

/// Tolerance on row sums accepted by [`ProbMatrix::new`].
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Row-stochastic `n x c` prediction matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbMatrix {
    n: usize,
    c: usize,
    probs: Vec<f64>,
}

impl ProbMatrix {
    pub fn new(n: usize, c: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n * c || c == 0 {
            return Err(Error::ShapeMismatch(format!(
                "{n}x{c} probability matrix with {} entries",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact(c).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "row {i} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(ProbMatrix { n, c, probs })
    }

    /// Row-wise softmax of a logit matrix.
    pub fn from_logits(logits: Matrix) -> Self {
        let (n, c) = logits.shape();
        let mut probs = logits.into_data();
        if c > 0 {
            for row in probs.chunks_exact_mut(c) {
                crate::numerics::softmax_in_place(row);
            }
        }
        ProbMatrix { n, c, probs }
    }

    pub(crate) fn from_rows_unchecked(n: usize, c: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), n * c);
        ProbMatrix { n, c, probs }
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.c..(i + 1) * self.c]
    }

    pub fn data(&self) -> &[f64] {
        &self.probs
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.probs[i * self.c + j]).collect()
    }

    /// Most probable class per row, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }
}

pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn n_features(&self) -> usize;
    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix>;

    fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x)?.argmax())
    }
}

/// Shared preconditions for `fit`.
pub(crate) fn check_training(x: &Matrix, y: &[usize], n_classes: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if x.rows() != y.len() {
        return Err(Error::DimMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if n_classes == 0 {
        return Err(Error::InvalidLabels("zero classes".into()));
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::LabelOutOfRange { label, n_classes });
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument("training data contains non-finite values".into()));
    }
    Ok(())
}

pub(crate) fn require_two_classes(y: &[usize]) -> Result<()> {
    if y.iter().all(|&l| l == y[0]) {
        return Err(Error::InvalidLabels(format!(
            "all {} training labels are class {}",
            y.len(),
            y[0]
        )));
    }
    Ok(())
}

pub(crate) fn check_query(x: &Matrix, n_features: usize) -> Result<()> {
    if x.cols() != n_features {
        return Err(Error::DimMismatch(format!(
            "model expects {n_features} features, input has {}",
            x.cols()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of `probs` against `y`.
pub fn cross_entropy(probs: &ProbMatrix, y: &[usize]) -> f64 {
    let n = y.len() as f64;
    y.iter()
        .enumerate()
        .map(|(i, &l)| -probs.row(i)[l].max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
        / n
}

pub fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64
}

#[cfg(test)]
pub(crate) mod testutil {
    use crate::numerics::{seeded_rng, Matrix};
    use rand::Rng;

    /// Gaussian-ish blobs around well separated centers.
    pub fn blobs(centers: &[&[f64]], per_class: usize, spread: f64, seed: u64) -> (Matrix, Vec<usize>) {
        let mut rng = seeded_rng(seed);
        let mut rows = vec![];
        let mut y = vec![];
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per_class {
                rows.push(center.iter().map(|m| m + spread * rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                y.push(c);
            }
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    pub fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::new(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    pub fn assert_stochastic(p: &super::ProbMatrix) {
        for i in 0..p.n_samples() {
            let row = p.row(i);
            assert!(row.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    /// Rearranges labels with `perm[old] = new`.
    pub fn permute(y: &[usize], perm: &[usize]) -> Vec<usize> {
        y.iter().map(|&l| perm[l]).collect()
    }

    /// Check that column `perm[j]` of `b` equals column `j` of `a`.
    pub fn assert_columns_permuted(a: &super::ProbMatrix, b: &super::ProbMatrix, perm: &[usize], tol: f64) {
        for i in 0..a.n_samples() {
            for j in 0..a.n_classes() {
                let (u, v) = (a.row(i)[j], b.row(i)[perm[j]]);
                assert!((u - v).abs() <= tol, "row {i} class {j}: {u} vs {v}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prob_matrix_validation() {
        assert!(ProbMatrix::new(1, 2, vec![0.5, 0.5]).is_ok());
        assert!(ProbMatrix::new(1, 2, vec![0.6, 0.5]).is_err());
        assert!(ProbMatrix::new(1, 2, vec![1.5, -0.5]).is_err());
        assert!(ProbMatrix::new(2, 2, vec![0.5, 0.5]).is_err());
        let p = ProbMatrix::from_logits(Matrix::from_rows(&[[0.0, 0.0], [3.0, 1.0]]).unwrap());
        assert_eq!(p.argmax(), vec![0, 0]);
        assert_eq!(p.row(0), &[0.5, 0.5]);
    }
}
