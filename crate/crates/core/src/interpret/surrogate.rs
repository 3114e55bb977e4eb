use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, seeded_rng, Matrix};

/// Kernel width of the proximity weights.
pub const KERNEL_WIDTH: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSample {
    /// 1 keeps a segment, 0 removes it.
    pub z: Vec<u8>,
    pub proximity: f64,
}

/// `exp(-D^2 / sigma^2)` with `D` the cosine distance between `z` and the
/// all-ones vector; the all-zeros vector has `D = 1`.
pub fn proximity(z: &[u8]) -> f64 {
    let ones = z.iter().filter(|&&v| v == 1).count();
    let d = if ones == 0 {
        1.0
    } else {
        1.0 - (ones as f64 / z.len() as f64).sqrt()
    };
    (-(d * d) / (KERNEL_WIDTH * KERNEL_WIDTH)).exp()
}

/// `n_samples` uniform draws from `{0,1}^n_segments`, except sample 0
/// which is the unperturbed all-ones vector.
pub fn sample_perturbations(n_segments: usize, n_samples: usize, seed: u64) -> Result<Vec<PerturbationSample>> {
    if n_samples == 0 || n_segments == 0 {
        return Err(Error::InvalidArgument("need at least one sample and one segment".into()));
    }
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let z: Vec<u8> = if i == 0 {
            vec![1; n_segments]
        } else {
            (0..n_segments).map(|_| u8::from(rng.random_bool(0.5))).collect()
        };
        out.push(PerturbationSample {
            proximity: proximity(&z),
            z,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub ridge: f64,
    /// Maximum number of nonzero weights.
    pub sparsity: usize,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            ridge: 1e-3,
            sparsity: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub target_class: usize,
    /// Model probability of `target_class` on the unperturbed image.
    pub target_probability: f64,
    pub intercept: f64,
    /// One per segment; zero outside the selected support.
    pub weights: Vec<f64>,
    pub used_samples: usize,
    #[serde(rename = "r2")]
    pub local_fit_r2: f64,
    /// Set when the model output did not vary over the samples.
    pub degenerate: bool,
}

impl Explanation {
    /// Segment with the largest |weight|, lowest index on ties.
    pub fn top_segment(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, w) in self.weights.iter().enumerate() {
            if *w != 0.0 && best.is_none_or(|b| w.abs() > self.weights[b].abs()) {
                best = Some(i);
            }
        }
        best
    }
}

/// Weighted ridge fit of `targets` on the sample vectors, restricted to
/// the columns in `support`. Proximities are normalized to sum 1 and the
/// intercept is unpenalized. Returns `(intercept, coefficients)`.
fn weighted_ridge(samples: &[PerturbationSample], targets: &[f64], support: &[usize], ridge: f64) -> Result<(f64, Vec<f64>)> {
    let total: f64 = samples.iter().map(|s| s.proximity).sum();
    let w: Vec<f64> = samples.iter().map(|s| s.proximity / total).collect();
    let k = support.len();
    let mut zbar = vec![0.0; k];
    let mut tbar = 0.0;
    for ((s, &wi), &t) in samples.iter().zip(&w).zip(targets) {
        for (a, &j) in support.iter().enumerate() {
            zbar[a] += wi * s.z[j] as f64;
        }
        tbar += wi * t;
    }
    let mut gram = Matrix::zeros(k, k);
    let mut rhs = vec![0.0; k];
    let mut zc = vec![0.0; k];
    for ((s, &wi), &t) in samples.iter().zip(&w).zip(targets) {
        for (a, &j) in support.iter().enumerate() {
            zc[a] = s.z[j] as f64 - zbar[a];
        }
        for a in 0..k {
            rhs[a] += wi * zc[a] * (t - tbar);
            if zc[a] != 0.0 {
                for b in 0..=a {
                    gram.set(a, b, gram.get(a, b) + wi * zc[a] * zc[b]);
                }
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            gram.set(b, a, gram.get(a, b));
        }
        gram.set(a, a, gram.get(a, a) + ridge);
    }
    let beta = cholesky_solve(&cholesky(&gram)?, &rhs);
    let intercept = tbar - zbar.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
    Ok((intercept, beta))
}

/// Sparse local linear surrogate of one class probability.
///
/// Fits a proximity-weighted ridge regression on all segments, keeps the
/// `sparsity` largest |coefficients| (lowest index on ties) and refits on
/// that subset. If the targets are all equal the weights are zero and the
/// result is flagged degenerate.
pub fn fit_surrogate(
    samples: &[PerturbationSample],
    targets: &[f64],
    target_class: usize,
    params: SurrogateParams,
) -> Result<Explanation> {
    if samples.is_empty() || samples.len() != targets.len() {
        return Err(Error::DimMismatch(format!("{} samples, {} targets", samples.len(), targets.len())));
    }
    let k = samples[0].z.len();
    if samples.iter().any(|s| s.z.len() != k) {
        return Err(Error::DimMismatch("perturbation vectors differ in length".into()));
    }
    if !(params.ridge > 0.0) {
        return Err(Error::InvalidArgument("ridge must be positive".into()));
    }
    let base = Explanation {
        target_class,
        target_probability: targets[0],
        intercept: 0.0,
        weights: vec![0.0; k],
        used_samples: samples.len(),
        local_fit_r2: 0.0,
        degenerate: false,
    };
    if targets.iter().all(|&t| t == targets[0]) {
        return Ok(Explanation {
            intercept: targets[0],
            degenerate: true,
            ..base
        });
    }
    let all: Vec<usize> = (0..k).collect();
    let (_, full) = weighted_ridge(samples, targets, &all, params.ridge)?;
    let mut ranked = all.clone();
    ranked.sort_by(|&a, &b| full[b].abs().total_cmp(&full[a].abs()).then(a.cmp(&b)));
    let mut support: Vec<usize> = ranked.into_iter().take(params.sparsity.min(k)).collect();
    support.sort_unstable();
    let (intercept, beta) = weighted_ridge(samples, targets, &support, params.ridge)?;
    let mut weights = vec![0.0; k];
    for (&j, &b) in support.iter().zip(&beta) {
        weights[j] = b;
    }
    let r2 = weighted_r2(samples, targets, intercept, &weights);
    Ok(Explanation {
        intercept,
        weights,
        local_fit_r2: r2,
        ..base
    })
}

fn weighted_r2(samples: &[PerturbationSample], targets: &[f64], intercept: f64, weights: &[f64]) -> f64 {
    let total: f64 = samples.iter().map(|s| s.proximity).sum();
    let tbar: f64 = samples.iter().zip(targets).map(|(s, t)| s.proximity * t).sum::<f64>() / total;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (s, &t) in samples.iter().zip(targets) {
        let pred = intercept + s.z.iter().zip(weights).map(|(&z, w)| z as f64 * w).sum::<f64>();
        ss_res += s.proximity * (t - pred).powi(2);
        ss_tot += s.proximity * (t - tbar).powi(2);
    }
    if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        0.0
    }
}

/// The objective minimized by the final refit, for checking optimality.
pub fn ridge_objective(samples: &[PerturbationSample], targets: &[f64], e: &Explanation, ridge: f64) -> f64 {
    let total: f64 = samples.iter().map(|s| s.proximity).sum();
    let mut loss = 0.0;
    for (s, &t) in samples.iter().zip(targets) {
        let pred = e.intercept + s.z.iter().zip(&e.weights).map(|(&z, w)| z as f64 * w).sum::<f64>();
        loss += s.proximity / total * (t - pred).powi(2);
    }
    loss + ridge * e.weights.iter().map(|w| w * w).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proximity_endpoints() {
        assert_eq!(proximity(&[1, 1, 1]), 1.0);
        assert_eq!(proximity(&[0, 0, 0]), (-1.0f64 / 0.0625).exp());
        let s = sample_perturbations(7, 50, 3).unwrap();
        assert_eq!(s[0].z, vec![1; 7]);
        assert_eq!(s[0].proximity, 1.0);
        assert_eq!(s, sample_perturbations(7, 50, 3).unwrap());
        assert!(s.iter().all(|p| p.proximity > 0.0 && p.proximity <= 1.0));
    }

    fn planted(j: usize, k: usize, n: usize) -> (Vec<PerturbationSample>, Vec<f64>) {
        let s = sample_perturbations(k, n, 11).unwrap();
        let t = s.iter().map(|p| 0.9 * p.z[j] as f64 + 0.05).collect();
        (s, t)
    }

    #[test]
    fn planted_feature_dominates() {
        let (s, t) = planted(4, 30, 1000);
        let e = fit_surrogate(&s, &t, 0, SurrogateParams::default()).unwrap();
        assert!((e.weights[4] - 0.9).abs() < 0.01, "{}", e.weights[4]);
        assert!(e.weights.iter().enumerate().all(|(i, w)| i == 4 || w.abs() < 0.05));
        assert_eq!(e.top_segment(), Some(4));
        assert!(e.weights.iter().filter(|w| **w != 0.0).count() <= 10);
        assert!(e.local_fit_r2 > 0.99);
    }

    #[test]
    fn refit_is_a_minimum_of_the_objective() {
        let (s, mut t) = planted(2, 15, 300);
        for (i, v) in t.iter_mut().enumerate() {
            *v += 0.01 * ((i * 7919) % 13) as f64;
        }
        let p = SurrogateParams { sparsity: 5, ..Default::default() };
        let e = fit_surrogate(&s, &t, 0, p).unwrap();
        let base = ridge_objective(&s, &t, &e, p.ridge);
        for j in (0..15).filter(|&j| e.weights[j] != 0.0) {
            for d in [1e-3, -1e-3] {
                let mut q = e.clone();
                q.weights[j] += d;
                assert!(ridge_objective(&s, &t, &q, p.ridge) >= base);
            }
        }
        for d in [1e-3, -1e-3] {
            let mut q = e.clone();
            q.intercept += d;
            assert!(ridge_objective(&s, &t, &q, p.ridge) >= base);
        }
    }

    #[test]
    fn constant_shift_and_duplicates_do_not_change_weights() {
        let (s, t) = planted(1, 12, 200);
        let e = fit_surrogate(&s, &t, 0, SurrogateParams::default()).unwrap();
        let shifted: Vec<f64> = t.iter().map(|v| v + 0.3).collect();
        let e2 = fit_surrogate(&s, &shifted, 0, SurrogateParams::default()).unwrap();
        let dup_s: Vec<_> = s.iter().chain(&s).cloned().collect();
        let dup_t: Vec<_> = t.iter().chain(&t).copied().collect();
        let e3 = fit_surrogate(&dup_s, &dup_t, 0, SurrogateParams::default()).unwrap();
        for j in 0..12 {
            assert!((e.weights[j] - e2.weights[j]).abs() < 1e-10);
            assert!((e.weights[j] - e3.weights[j]).abs() < 1e-10);
        }
        assert!((e2.intercept - e.intercept - 0.3).abs() < 1e-10);
    }

    #[test]
    fn constant_model_is_degenerate() {
        let s = sample_perturbations(9, 40, 1).unwrap();
        let e = fit_surrogate(&s, &[0.25; 40], 2, SurrogateParams::default()).unwrap();
        assert!(e.degenerate);
        assert!(e.weights.iter().all(|&w| w == 0.0));
        assert_eq!(e.top_segment(), None);
    }
}
