use serde::{Deserialize, Serialize};

use super::{dot, symmetric_eigen, Matrix};
use crate::error::{Error, Result};

/// Which symmetric matrix to diagonalize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcaMethod {
    /// Gram path when `d > n`, covariance path otherwise.
    Auto,
    /// Eigendecompose the `n x n` Gram matrix of the centered data.
    Gram,
    /// Eigendecompose the `d x d` sample covariance.
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k x d`, orthonormal rows.
    pub components: Matrix,
    /// Sample variance along each component, nonincreasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Set when fewer than the requested components had nonzero variance.
    pub rank_deficient: bool,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn pca_fit(x: &Matrix, k: usize) -> Result<PcaModel> {
    pca_fit_with(x, k, PcaMethod::Auto)
}

/// Block width (in columns) for the Gram accumulation; keeps one block of
/// every row resident in cache.
const GRAM_BLOCK: usize = 512;

pub fn pca_fit_with(x: &Matrix, k: usize, method: PcaMethod) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > (n - 1).min(d) {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must lie in [1, {}] for {n}x{d} data",
            (n - 1).min(d)
        )));
    }

    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let denom = (n - 1) as f64;

    let use_gram = match method {
        PcaMethod::Auto => d > n,
        PcaMethod::Gram => true,
        PcaMethod::Covariance => false,
    };

    let (eigenvalues, mut components) = if use_gram {
        let gram = gram_matrix(&centered);
        let eig = symmetric_eigen(&gram)?;
        let values: Vec<f64> = eig.values.iter().map(|v| v / denom).collect();
        let take = k.min(n);
        let mut comps = Matrix::zeros(take, d);
        for c in 0..take {
            let lambda = eig.values[c];
            if lambda <= 0.0 {
                continue;
            }
            let u = eig.vectors.row(c);
            let dst = comps.row_mut(c);
            for (i, &ui) in u.iter().enumerate() {
                if ui != 0.0 {
                    super::axpy(ui, centered.row(i), dst);
                }
            }
            let norm = lambda.sqrt();
            dst.iter_mut().for_each(|v| *v /= norm);
        }
        (values, comps)
    } else {
        let mut cov = Matrix::zeros(d, d);
        for row in centered.iter_rows() {
            for (a, &ra) in row.iter().enumerate() {
                if ra != 0.0 {
                    super::axpy(ra, row, cov.row_mut(a));
                }
            }
        }
        cov.data_mut().iter_mut().for_each(|v| *v /= denom);
        let eig = symmetric_eigen(&cov)?;
        let comps = eig.vectors.select_rows(&(0..k).collect::<Vec<_>>());
        (eig.values, comps)
    };

    let total_variance: f64 = eigenvalues.iter().filter(|v| **v > 0.0).sum();
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = lambda_max * (n.max(d) as f64) * f64::EPSILON * 10.0;
    let rank = eigenvalues.iter().filter(|&&v| v > tol && v > 0.0).count();
    let kept = k.min(rank);

    let keep: Vec<usize> = (0..kept).collect();
    components = components.select_rows(&keep);
    for c in 0..kept {
        fix_sign(components.row_mut(c));
    }
    let explained_variance = eigenvalues[..kept].to_vec();

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
        rank_deficient: kept < k,
    })
}

/// `X X^T` accumulated in column blocks. Summation order is fixed.
fn gram_matrix(x: &Matrix) -> Matrix {
    let (n, d) = x.shape();
    let mut g = Matrix::zeros(n, n);
    let mut start = 0;
    while start < d {
        let end = (start + GRAM_BLOCK).min(d);
        for i in 0..n {
            let ri = &x.row(i)[start..end];
            for j in 0..=i {
                let v = dot(ri, &x.row(j)[start..end]);
                g.data_mut()[i * n + j] += v;
            }
        }
        start = end;
    }
    for i in 0..n {
        for j in 0..i {
            let v = g.get(i, j);
            g.set(j, i, v);
        }
    }
    g
}

/// Largest-magnitude entry becomes positive; first such entry on ties.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Project rows onto the components: `(X - mean) C^T`.
pub fn pca_transform(model: &PcaModel, x: &Matrix) -> Result<Matrix> {
    if x.cols() != model.dim() {
        return Err(Error::DimMismatch(format!(
            "PCA fitted on {} features, input has {}",
            model.dim(),
            x.cols()
        )));
    }
    let k = model.n_components();
    let mut out = Matrix::zeros(x.rows(), k);
    let mut buf = vec![0.0; model.dim()];
    for i in 0..x.rows() {
        for ((b, v), m) in buf.iter_mut().zip(x.row(i)).zip(&model.mean) {
            *b = v - m;
        }
        for c in 0..k {
            out.set(i, c, dot(&buf, model.components.row(c)));
        }
    }
    Ok(out)
}

/// Explained-variance ratios, one per retained component.
pub fn scree(model: &PcaModel) -> Vec<f64> {
    if model.total_variance <= 0.0 {
        return vec![0.0; model.n_components()];
    }
    model
        .explained_variance
        .iter()
        .map(|v| v / model.total_variance)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = crate::numerics::seeded_rng(seed);
        let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(n, d, data).unwrap()
    }

    #[test]
    fn single_axis_variance() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0], [2.0, 0.0], [-2.0, 0.0]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert_eq!(m.components.row(0), &[1.0, 0.0]);
        assert_eq!(scree(&m), vec![1.0]);
        assert!(!m.rank_deficient);
    }

    #[test]
    fn identical_points_are_rank_deficient() {
        let x = Matrix::from_rows(&[[3.0, 1.0], [3.0, 1.0], [3.0, 1.0]]).unwrap();
        let m = pca_fit(&x, 1).unwrap();
        assert!(m.rank_deficient);
        assert_eq!(m.n_components(), 0);
        assert_eq!(m.total_variance, 0.0);
    }

    #[test]
    fn rejects_bad_k() {
        let x = random_matrix(5, 3, 1);
        assert!(pca_fit(&x, 0).is_err());
        assert!(pca_fit(&x, 4).is_err());
        assert!(pca_fit(&random_matrix(1, 3, 1), 1).is_err());
    }

    #[test]
    fn mean_row_projects_to_zero_and_dim_checked() {
        let x = random_matrix(10, 4, 2);
        let m = pca_fit(&x, 3).unwrap();
        let mean_rows = Matrix::from_rows(&[m.mean.clone(), m.mean.clone()]).unwrap();
        let z = pca_transform(&m, &mean_rows).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            pca_transform(&m, &random_matrix(2, 5, 3)),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let x = random_matrix(8, 5, 4);
        let m = pca_fit(&x, 5).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        for i in 0..8 {
            for j in 0..5 {
                let rec: f64 = m.mean[j] + (0..5).map(|c| z.get(i, c) * m.components.get(c, j)).sum::<f64>();
                assert!((rec - x.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn isotropic_scree_is_balanced() {
        // square corners: covariance is a multiple of the identity
        let x = Matrix::from_rows(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let r = scree(&pca_fit(&x, 2).unwrap());
        assert!((r[0] - 0.5).abs() < 1e-12 && (r[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projected_variance_matches_explained_variance() {
        let x = random_matrix(30, 12, 5);
        let m = pca_fit(&x, 6).unwrap();
        let z = pca_transform(&m, &x).unwrap();
        for c in 0..6 {
            let var: f64 = (0..30).map(|i| z.get(i, c).powi(2)).sum::<f64>() / 29.0;
            assert!((var - m.explained_variance[c]).abs() <= 1e-6 * m.explained_variance[c]);
        }
        let r = scree(&m);
        assert!(r.iter().sum::<f64>() <= 1.0 + 1e-12);
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
    }
}
