use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SmallCnn;
use crate::baselines::{accuracy, check_training, require_two_classes, Classifier};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, Matrix};
use crate::training::{select_epoch, TrainRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            epochs: 25,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnTrainOutcome {
    /// Checkpoint from `selected_epoch`, not necessarily the last one.
    pub model: SmallCnn,
    pub history: Vec<TrainRecord>,
    pub selected_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &CnnTrainConfig, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
        }
    }
}

/// Train with Adam on shuffled mini-batches and keep the checkpoint with
/// the best validation accuracy (earliest epoch on ties).
///
/// Each record's loss and training accuracy are running means over the
/// epoch's mini-batches, measured before each update; validation accuracy
/// is a full pass after the epoch.
pub fn cnn_train(
    train_x: &Matrix,
    train_y: &[usize],
    val_x: &Matrix,
    val_y: &[usize],
    n_classes: usize,
    cfg: CnnTrainConfig,
) -> Result<CnnTrainOutcome> {
    check_training(train_x, train_y, n_classes)?;
    require_two_classes(train_y)?;
    if let Some(k) = (0..n_classes).find(|k| !train_y.contains(k)) {
        return Err(Error::DegenerateClass(format!("class index {k} in the training subset")));
    }
    if val_y.is_empty() || val_x.rows() != val_y.len() {
        return Err(Error::InvalidArgument(
            "a nonempty validation subset with one label per row is required for epoch selection".into(),
        ));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("epochs, batch size and lr must be positive".into()));
    }

    let mut rng = seeded_rng(cfg.seed);
    let mut model = SmallCnn::init_with(n_classes, &mut rng);
    model.check_batch(val_x)?;
    let mut adam = Adam::new(model.n_params());
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, SmallCnn)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, hits, grad) = model.batch_step(train_x, train_y, batch)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("small CNN loss non-finite in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            correct += hits;
            adam.step(&cfg, &mut model.params, &grad);
        }
        let n = train_x.rows() as f64;
        let val_accuracy = accuracy(&model.predict(val_x)?, val_y);
        history.push(TrainRecord {
            epoch,
            loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            val_accuracy,
        });
        if best.as_ref().is_none_or(|(acc, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, model.clone()));
        }
    }
    let selected_epoch = select_epoch(&history).expect("at least one epoch");
    Ok(CnnTrainOutcome {
        model: best.expect("at least one epoch").1,
        history,
        selected_epoch,
    })
}
