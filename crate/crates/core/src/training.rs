//! Per-epoch training history shared by the CNN and the transfer head.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "train_acc")]
    pub train_accuracy: f64,
    #[serde(rename = "val_acc")]
    pub val_accuracy: f64,
}

/// Epoch with the highest validation accuracy, earliest on ties.
pub fn select_epoch(history: &[TrainRecord]) -> Option<usize> {
    let mut best: Option<&TrainRecord> = None;
    for r in history {
        if best.is_none_or(|b| r.val_accuracy > b.val_accuracy) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

/// CSV with header `epoch,loss,train_acc,val_acc`.
pub fn write_history(path: &Path, history: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<Vec<TrainRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
