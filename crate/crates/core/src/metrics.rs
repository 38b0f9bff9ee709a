//! Pixel confusion counts and the precision / recall / IoU / F1 they imply.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probabilities at or above this are foreground.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub iou: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Add the pixels of `pred` (probabilities) against binary `label`.
    pub fn accumulate<T: Element>(&mut self, pred: &Tensor<T>, label: &Tensor<T>) -> Result<()> {
        if pred.shape() != label.shape() {
            return Err(Error::Shape(format!(
                "prediction {} vs label {}",
                pred.shape(),
                label.shape()
            )));
        }
        let threshold = T::from_f64(THRESHOLD);
        let mut add = ConfusionCounts::default();
        for (&p, &y) in pred.data().iter().zip(label.data()) {
            let truth = if y == T::one() {
                true
            } else if y == T::zero() {
                false
            } else {
                return Err(Error::Label(format!("label value {y} is not 0 or 1")));
            };
            match (p >= threshold, truth) {
                (true, true) => add.tp += 1,
                (true, false) => add.fp += 1,
                (false, true) => add.fn_ += 1,
                (false, false) => add.tn += 1,
            }
        }
        self.merge(&add);
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Metrics with every 0/0 defined as 0.
    pub fn metrics(&self) -> Metrics {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let iou = ratio(self.tp, self.tp + self.fp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics {
            precision,
            recall,
            iou,
            f1,
        }
    }
}

pub fn metrics_from(c: &ConfusionCounts) -> Metrics {
    c.metrics()
}
