//! Convex blending of two models' probability outputs, with the weight
//! picked by exhaustive grid search on a chosen metric.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ProbMatrix;
use crate::error::{Error, Result};
use crate::evaluate::{confusion, exact_rates, f1_binary, roc_auc};

/// `alpha * p1 + (1 - alpha) * p2`.
pub fn combine(p1: &ProbMatrix, p2: &ProbMatrix, alpha: f64) -> Result<ProbMatrix> {
    if p1.n_samples() != p2.n_samples() || p1.n_classes() != p2.n_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            p1.n_samples(),
            p1.n_classes(),
            p2.n_samples(),
            p2.n_classes()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    let beta = 1.0 - alpha;
    let data = p1.data().iter().zip(p2.data()).map(|(a, b)| alpha * a + beta * b).collect();
    ProbMatrix::new(p1.n_samples(), p1.n_classes(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    AvgTpr,
    /// Two-class only, class 1 positive.
    F1,
    /// Two-class only, scored on the class-1 column.
    Auc,
    NegAvgFpr,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Accuracy, Metric::AvgTpr, Metric::F1, Metric::Auc, Metric::NegAvgFpr];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::AvgTpr => "avg_tpr",
            Metric::F1 => "f1",
            Metric::Auc => "auc",
            Metric::NegAvgFpr => "neg_avg_fpr",
        }
    }

    /// Higher is better for every metric.
    pub fn score(self, probs: &ProbMatrix, y_true: &[usize]) -> Result<f64> {
        if probs.n_samples() != y_true.len() {
            return Err(Error::DimMismatch(format!(
                "{} prediction rows, {} labels",
                probs.n_samples(),
                y_true.len()
            )));
        }
        let c = probs.n_classes();
        if matches!(self, Metric::F1 | Metric::Auc) && c != 2 {
            return Err(Error::NotBinary(c));
        }
        if self == Metric::Auc {
            if let Some(&l) = y_true.iter().find(|&&l| l >= 2) {
                return Err(Error::LabelOutOfRange { label: l, n_classes: 2 });
            }
            return Ok(roc_auc(&probs.column(1), y_true)?.auc);
        }
        let cm = confusion(y_true, &probs.argmax(), c)?;
        let to_f64 = |r: &num_rational::BigRational| r.to_f64().unwrap_or(f64::NAN);
        Ok(match self {
            Metric::Accuracy => cm.trace() as f64 / cm.total() as f64,
            Metric::AvgTpr => to_f64(&exact_rates(&cm)?.avg_tpr),
            Metric::NegAvgFpr => -to_f64(&exact_rates(&cm)?.avg_fpr),
            Metric::F1 => f1_binary(&cm, 1)?,
            Metric::Auc => unreachable!(),
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationResult {
    /// Weight on the first model; the second gets `1 - alpha`.
    pub alpha: f64,
    pub objective_value: f64,
    pub metric_name: String,
    pub grid_step: f64,
    pub per_alpha_curve: Vec<(f64, f64)>,
}

impl CombinationResult {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut v = serde_json::to_vec_pretty(self)?;
        v.push(b'\n');
        std::fs::write(path, v).map_err(|e| Error::io(path, e))
    }

    pub fn write_curve_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["alpha", &self.metric_name])?;
        for (a, v) in &self.per_alpha_curve {
            w.write_record([a.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `{0, step, 2 step, ..} ∪ {1}`. When `1 / step` is (nearly) an integer
/// `n` the points are computed as `i / n` so that e.g. 0.51 is exact.
pub fn alpha_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() < 1e-9 {
        let n = n as usize;
        return Ok((0..=n).map(|i| i as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..).map(|i| i as f64 * step).take_while(|&a| a < 1.0).collect();
    grid.push(1.0);
    Ok(grid)
}

/// Evaluate `metric` on every grid blend and keep the best, smallest
/// alpha on ties.
pub fn optimize_alpha(p1: &ProbMatrix, p2: &ProbMatrix, y_true: &[usize], metric: Metric, grid_step: f64) -> Result<CombinationResult> {
    let grid = alpha_grid(grid_step)?;
    let curve = grid
        .par_iter()
        .map(|&a| Ok((a, metric.score(&combine(p1, p2, a)?, y_true)?)))
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let mut best = 0;
    for (i, &(_, v)) in curve.iter().enumerate() {
        if v > curve[best].1 {
            best = i;
        }
    }
    Ok(CombinationResult {
        alpha: curve[best].0,
        objective_value: curve[best].1,
        metric_name: metric.name().to_string(),
        grid_step,
        per_alpha_curve: curve,
    })
}
