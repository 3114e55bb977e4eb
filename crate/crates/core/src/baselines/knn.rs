use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::{expect_blobs, header_field, ClassifierKind, Persist};
use super::{check_query, check_training, Classifier, ProbMatrix};
use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnnHyper {
    pub k: usize,
}

impl Default for KnnHyper {
    fn default() -> Self {
        KnnHyper { k: 5 }
    }
}

/// Brute-force k-nearest-neighbor vote under Euclidean distance.
///
/// Distance ties go to the lower training index. Probabilities are the vote
/// fractions, so the vote-tie rule only shows up in [`Classifier::predict`]
/// (lowest class index wins).
#[derive(Debug, Clone, PartialEq)]
pub struct Knn {
    pub hyper: KnnHyper,
    n_classes: usize,
    x: Matrix,
    y: Vec<usize>,
}

impl Knn {
    pub fn fit(x: &Matrix, y: &[usize], n_classes: usize, hyper: KnnHyper) -> Result<Self> {
        check_training(x, y, n_classes)?;
        if hyper.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if hyper.k > x.rows() {
            return Err(Error::KTooLarge { k: hyper.k, n: x.rows() });
        }
        Ok(Knn {
            hyper,
            n_classes,
            x: x.clone(),
            y: y.to_vec(),
        })
    }

    /// Indices of the k nearest training rows, nearest first.
    pub fn neighbors(&self, query: &[f64]) -> Vec<usize> {
        let mut scored: Vec<(f64, usize)> = self
            .x
            .iter_rows()
            .enumerate()
            .map(|(i, row)| (squared_distance(row, query), i))
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = self.hyper.k;
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_dist);
            scored.truncate(k);
        }
        scored.sort_by(by_dist);
        scored.into_iter().map(|(_, i)| i).collect()
    }
}

impl Classifier for Knn {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn n_features(&self) -> usize {
        self.x.cols()
    }

    fn predict_proba(&self, x: &Matrix) -> Result<ProbMatrix> {
        check_query(x, self.n_features())?;
        let c = self.n_classes;
        let k = self.hyper.k as f64;
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|i| {
                let mut votes = vec![0.0; c];
                for j in self.neighbors(x.row(i)) {
                    votes[self.y[j]] += 1.0;
                }
                votes.iter_mut().for_each(|v| *v /= k);
                votes
            })
            .collect();
        Ok(ProbMatrix::from_rows_unchecked(x.rows(), c, rows.concat()))
    }
}

impl Persist for Knn {
    const KIND: ClassifierKind = ClassifierKind::Knn;

    fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "hyper": self.hyper,
            "n_classes": self.n_classes,
            "n_train": self.x.rows(),
            "n_features": self.x.cols(),
        })
    }

    fn blobs(&self) -> Vec<Vec<f64>> {
        vec![
            self.x.data().to_vec(),
            self.y.iter().map(|&l| l as f64).collect(),
        ]
    }

    fn restore(h: &serde_json::Value, blobs: &[Vec<f64>]) -> Result<Self> {
        let n: usize = header_field(h, "n_train")?;
        let d: usize = header_field(h, "n_features")?;
        expect_blobs(blobs, &[n * d, n])?;
        Ok(Knn {
            hyper: header_field(h, "hyper")?,
            n_classes: header_field(h, "n_classes")?,
            x: Matrix::new(n, d, blobs[0].clone())?,
            y: blobs[1].iter().map(|&v| v as usize).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;

    /// Full sort of every training point, no partial selection.
    fn oracle(x: &Matrix, y: &[usize], c: usize, k: usize, q: &[f64]) -> Vec<f64> {
        let mut all: Vec<(f64, usize)> = (0..x.rows())
            .map(|i| {
                let d: f64 = x.row(i).iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0.0; c];
        for &(_, i) in &all[..k] {
            votes[y[i]] += 1.0;
        }
        votes.into_iter().map(|v| v / k as f64).collect()
    }

    #[test]
    fn single_point_always_wins() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let m = Knn::fit(&x, &[1], 2, KnnHyper { k: 1 }).unwrap();
        let p = m.predict_proba(&random_matrix(3, 2, 1)).unwrap();
        for i in 0..3 {
            assert_eq!(p.row(i), &[0.0, 1.0]);
        }
    }

    #[test]
    fn equidistant_pair_splits_vote() {
        let x = Matrix::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let m = Knn::fit(&x, &[0, 1], 2, KnnHyper { k: 2 }).unwrap();
        let p = m.predict_proba(&Matrix::from_rows(&[[0.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(p.row(0), &[0.5, 0.5]);
        assert_eq!(m.predict(&Matrix::from_rows(&[[0.0, 3.0]]).unwrap()).unwrap(), vec![0]);
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let x = Matrix::from_rows(&[[1.0], [-1.0], [1.0]]).unwrap();
        let m = Knn::fit(&x, &[0, 1, 1], 2, KnnHyper { k: 1 }).unwrap();
        assert_eq!(m.neighbors(&[0.0]), vec![0]);
    }

    #[test]
    fn k_too_large() {
        let x = random_matrix(3, 2, 0);
        assert!(matches!(Knn::fit(&x, &[0, 1, 0], 2, KnnHyper { k: 4 }), Err(Error::KTooLarge { k: 4, n: 3 })));
    }

    #[test]
    fn twenty_points_match_oracle() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[1.0, 1.0]], 10, 0.9, 11);
        let m = Knn::fit(&x, &y, 2, KnnHyper::default()).unwrap();
        let q = random_matrix(30, 2, 12);
        let p = m.predict_proba(&q).unwrap();
        for i in 0..30 {
            assert_eq!(p.row(i), oracle(&x, &y, 2, 5, q.row(i)).as_slice());
        }
    }

    #[test]
    fn label_permutation() {
        let (x, y) = blobs(&[&[0.0, 0.0], &[1.0, 1.0], &[2.0, 0.0]], 8, 0.8, 5);
        let perm = [2, 0, 1];
        let a = Knn::fit(&x, &y, 3, KnnHyper::default()).unwrap();
        let b = Knn::fit(&x, &permute(&y, &perm), 3, KnnHyper::default()).unwrap();
        let q = random_matrix(10, 2, 6);
        assert_columns_permuted(&a.predict_proba(&q).unwrap(), &b.predict_proba(&q).unwrap(), &perm, 0.0);
    }

    #[test]
    fn persist_round_trip() {
        let (x, y) = blobs(&[&[0.0], &[3.0]], 4, 1.0, 2);
        let m = Knn::fit(&x, &y, 2, KnnHyper { k: 3 }).unwrap();
        let back = Knn::from_file(&crate::baselines::ModelFile::decode(&m.to_file().encode().unwrap()).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
