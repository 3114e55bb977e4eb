//! Confusion matrices, per-class and averaged rates, F1, ROC/AUC, report
//! files and the `.mprob` prediction format.
//!
//! Rates are formed as exact rationals from integer counts and rounded to
//! `f64` once, so hand-computed fractions compare equal.
//!
//! Averages run over classes with at least one true sample; a class with
//! no support has `None` in both per-class sequences and is listed in
//! `unsupported_classes`. The false positive rate of class `i` divides by
//! the number of samples whose true class is not `i`.

use std::path::Path;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::baselines::ProbMatrix;
use crate::codec::{self, Reader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    /// Row-major; rows are true classes, columns predicted classes.
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.n_classes + predicted]
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.n_classes..(i + 1) * self.n_classes].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, j)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimMismatch(format!(
            "{} true labels, {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![0u64; n_classes * n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for label in [t, p] {
            if label >= n_classes {
                return Err(Error::LabelOutOfRange { label, n_classes });
            }
        }
        counts[t * n_classes + p] += 1;
    }
    Ok(ConfusionMatrix { n_classes, counts })
}

/// Exact per-class rates of a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRates {
    pub accuracy: Ratio<u64>,
    pub per_class_tpr: Vec<Option<Ratio<u64>>>,
    pub per_class_fpr: Vec<Option<Ratio<u64>>>,
    pub avg_tpr: BigRational,
    pub avg_fpr: BigRational,
}

pub fn exact_rates(cm: &ConfusionMatrix) -> Result<ExactRates> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    let n = cm.n_classes;
    let mut tpr = Vec::with_capacity(n);
    let mut fpr = Vec::with_capacity(n);
    for i in 0..n {
        let support = cm.row_sum(i);
        if support == 0 {
            tpr.push(None);
            fpr.push(None);
            continue;
        }
        let tp = cm.get(i, i);
        tpr.push(Some(Ratio::new(tp, support)));
        let negatives = total - support;
        fpr.push((negatives > 0).then(|| Ratio::new(cm.col_sum(i) - tp, negatives)));
    }
    Ok(ExactRates {
        accuracy: Ratio::new(cm.trace(), total),
        avg_tpr: mean(&tpr),
        avg_fpr: mean(&fpr),
        per_class_tpr: tpr,
        per_class_fpr: fpr,
    })
}

fn mean(values: &[Option<Ratio<u64>>]) -> BigRational {
    let present: Vec<&Ratio<u64>> = values.iter().flatten().collect();
    if present.is_empty() {
        return BigRational::zero();
    }
    let sum = present.iter().fold(BigRational::zero(), |acc, r| {
        acc + BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
    });
    sum / BigRational::from_integer(BigInt::from(present.len()))
}

fn ratio_f64(r: &Ratio<u64>) -> f64 {
    big_f64(&BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom())))
}

fn big_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rates lie in [0, 1]")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this value are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    /// From `(inf, 0, 0)` down to the lowest score at `(1, 1)`.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC by sweeping a threshold over the distinct scores, AUC by the
/// trapezoid rule over the resulting points.
///
/// The trapezoid sum is accumulated on integer counts, so AUC is exact up
/// to one final rounding; tied scores form one diagonal segment, which is
/// the half-credit convention for ties.
pub fn roc_auc(scores: &[f64], y_true: &[usize]) -> Result<Roc> {
    if scores.len() != y_true.len() {
        return Err(Error::DimMismatch(format!("{} scores, {} labels", scores.len(), y_true.len())));
    }
    if let Some(&l) = y_true.iter().find(|&&l| l > 1) {
        return Err(Error::LabelOutOfRange { label: l, n_classes: 2 });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = y_true.iter().filter(|&&l| l == 1).count() as u64;
    let neg = y_true.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (prev_tp, prev_fp) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if y_true[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += u128::from(fp - prev_fp) * u128::from(tp + prev_tp);
        points.push(RocPoint {
            threshold: s,
            fpr: ratio_f64(&Ratio::new(fp, neg)),
            tpr: ratio_f64(&Ratio::new(tp, pos)),
        });
    }
    let auc = BigRational::new(BigInt::from(twice_area), BigInt::from(2u128 * u128::from(pos) * u128::from(neg)));
    Ok(Roc { points, auc: big_f64(&auc) })
}

/// `2PR / (P + R)` for `positive`, which is `2 tp / (2 tp + fp + fn)`;
/// 0 when there are no true positives.
pub fn f1_binary(cm: &ConfusionMatrix, positive: usize) -> Result<f64> {
    if cm.n_classes != 2 {
        return Err(Error::NotBinary(cm.n_classes));
    }
    if positive > 1 {
        return Err(Error::LabelOutOfRange { label: positive, n_classes: 2 });
    }
    let tp = cm.get(positive, positive);
    let fp = cm.col_sum(positive) - tp;
    let fn_ = cm.row_sum(positive) - tp;
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(ratio_f64(&Ratio::new(2 * tp, 2 * tp + fp + fn_)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    pub n_samples: u64,
    pub accuracy: f64,
    pub per_class_tpr: Vec<Option<f64>>,
    pub per_class_fpr: Vec<Option<f64>>,
    pub avg_tpr: f64,
    pub avg_fpr: f64,
    /// Classes with no true samples, left out of both averages.
    pub unsupported_classes: Vec<usize>,
    pub confusion: ConfusionMatrix,
    pub positive_class: Option<usize>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    /// `(fpr, tpr)` pairs of the ROC sweep.
    pub roc_points: Option<Vec<(f64, f64)>>,
}

/// Accuracy and per-class / averaged TPR and FPR.
pub fn rates(cm: &ConfusionMatrix, class_names: &[String]) -> Result<MetricsReport> {
    let ex = exact_rates(cm)?;
    if class_names.len() != cm.n_classes {
        return Err(Error::DimMismatch(format!(
            "{} class names for {} classes",
            class_names.len(),
            cm.n_classes
        )));
    }
    let conv = |v: &[Option<Ratio<u64>>]| v.iter().map(|r| r.as_ref().map(ratio_f64)).collect();
    Ok(MetricsReport {
        class_names: class_names.to_vec(),
        n_samples: cm.total(),
        accuracy: ratio_f64(&ex.accuracy),
        per_class_tpr: conv(&ex.per_class_tpr),
        per_class_fpr: conv(&ex.per_class_fpr),
        avg_tpr: big_f64(&ex.avg_tpr),
        avg_fpr: big_f64(&ex.avg_fpr),
        unsupported_classes: (0..cm.n_classes).filter(|&i| cm.row_sum(i) == 0).collect(),
        confusion: cm.clone(),
        positive_class: None,
        f1: None,
        auc: None,
        roc_points: None,
    })
}

/// Full report for a prediction matrix: argmax confusion and rates, plus
/// F1 and ROC/AUC on two-class tasks (`positive` defaults to class 1).
/// Returns the ROC too, for callers that write the threshold CSV.
pub fn evaluate_probs(
    probs: &ProbMatrix,
    y_true: &[usize],
    class_names: &[String],
    positive: Option<usize>,
) -> Result<(MetricsReport, Option<Roc>)> {
    if probs.n_samples() != y_true.len() {
        return Err(Error::DimMismatch(format!(
            "{} prediction rows, {} labels",
            probs.n_samples(),
            y_true.len()
        )));
    }
    let cm = confusion(y_true, &probs.argmax(), probs.n_classes())?;
    let mut report = rates(&cm, class_names)?;
    if cm.n_classes != 2 {
        return match positive {
            Some(_) => Err(Error::NotBinary(cm.n_classes)),
            None => Ok((report, None)),
        };
    }
    let pos = positive.unwrap_or(1);
    report.positive_class = Some(pos);
    report.f1 = Some(f1_binary(&cm, pos)?);
    let binary: Vec<usize> = y_true.iter().map(|&l| usize::from(l == pos)).collect();
    let roc = match roc_auc(&probs.column(pos), &binary) {
        Ok(r) => Some(r),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    if let Some(r) = &roc {
        report.auc = Some(r.auc);
        report.roc_points = Some(r.points.iter().map(|p| (p.fpr, p.tpr)).collect());
    }
    Ok((report, roc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown report format {s:?}"))),
        }
    }
}

/// Header of the CSV report. One row per scalar: `accuracy`, `avg_tpr`,
/// `avg_fpr`, `f1`, `auc` with an empty class column, then `tpr` and `fpr`
/// per class. Undefined values are empty cells.
pub const REPORT_CSV_HEADER: &str = "metric,class,value";

pub fn report_write(report: &MetricsReport, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report)?;
            v.push(b'\n');
            v
        }
        ReportFormat::Csv => report_csv(report).into_bytes(),
    };
    codec::write_file(path, &bytes)
}

pub fn report_read(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_slice(&codec::read_file(path)?)?)
}

fn report_csv(r: &MetricsReport) -> String {
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(REPORT_CSV_HEADER.split(',')).unwrap();
    let scalars = [
        ("accuracy", Some(r.accuracy)),
        ("avg_tpr", Some(r.avg_tpr)),
        ("avg_fpr", Some(r.avg_fpr)),
        ("f1", r.f1),
        ("auc", r.auc),
    ];
    for (name, v) in scalars {
        w.write_record([name, "", &cell(v)]).unwrap();
    }
    for (name, seq) in [("tpr", &r.per_class_tpr), ("fpr", &r.per_class_fpr)] {
        for (class, v) in r.class_names.iter().zip(seq) {
            w.write_record([name, class, &cell(*v)]).unwrap();
        }
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// ROC CSV `threshold,fpr,tpr`; the first threshold is written `inf`.
pub fn write_roc_csv(roc: &Roc, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        let t = if p.threshold.is_infinite() { "inf".to_string() } else { p.threshold.to_string() };
        out.push_str(&format!("{t},{},{}\n", p.fpr, p.tpr));
    }
    codec::write_file(path, out.as_bytes())
}

const MPROB_MAGIC: &[u8; 4] = b"MPRB";
/// Row-sum tolerance on load; entries are f32 on disk.
pub const MPROB_LOAD_TOL: f64 = 1e-5;

/// `.mprob`: "MPRB", u32 n, u32 c, then `n x c` f32, all little-endian.
pub fn encode_probs(p: &ProbMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + p.data().len() * 4);
    out.extend_from_slice(MPROB_MAGIC);
    for v in [p.n_samples(), p.n_classes()] {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument("matrix too large for .mprob".into()))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    let f: Vec<f32> = p.data().iter().map(|&v| v as f32).collect();
    codec::put_f32s(&mut out, &f);
    Ok(out)
}

/// Parse and validate a `.mprob` image. Each row must be nonnegative and
/// sum to 1 within [`MPROB_LOAD_TOL`]; rows are then renormalized in f64.
pub fn decode_probs(bytes: &[u8]) -> Result<ProbMatrix> {
    let mut rd = Reader::new(bytes);
    rd.magic(MPROB_MAGIC)?;
    let n = rd.u32()? as usize;
    let c = rd.u32()? as usize;
    if c == 0 {
        return Err(Error::Malformed { offset: 8, message: "zero classes".into() });
    }
    let body = rd.offset();
    let raw = rd.f32_vec(n * c)?;
    if rd.remaining() > 0 {
        return Err(Error::Malformed {
            offset: rd.offset(),
            message: format!("{} trailing bytes", rd.remaining()),
        });
    }
    let mut probs = Vec::with_capacity(n * c);
    for (i, row) in raw.chunks_exact(c).enumerate() {
        let row: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !(*v >= 0.0)) || !((sum - 1.0).abs() <= MPROB_LOAD_TOL) {
            return Err(Error::Malformed {
                offset: body + i * c * 4,
                message: format!("row {i} is not a probability distribution (sum {sum})"),
            });
        }
        probs.extend(row.iter().map(|v| v / sum));
    }
    ProbMatrix::new(n, c, probs)
}

pub fn write_probs(p: &ProbMatrix, path: &Path) -> Result<()> {
    codec::write_file(path, &encode_probs(p)?)
}

pub fn read_probs(path: &Path) -> Result<ProbMatrix> {
    decode_probs(&codec::read_file(path)?)
}
