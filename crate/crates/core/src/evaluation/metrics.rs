use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingestion::Label;

/// Binary confusion counts with label 1 (hate) as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    /// F1 of one class; 0 when precision + recall is 0.
    pub fn class_f1(&self, label: Label) -> f64 {
        let (tp, fp, fn_) = if label.is_hate() {
            (self.tp, self.fp, self.fn_)
        } else {
            (self.tn, self.fn_, self.fp)
        };
        let denom = 2 * tp + fp + fn_;
        if tp == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn macro_f1(&self) -> f64 {
        (self.class_f1(Label::NON_HATE) + self.class_f1(Label::HATE)) / 2.0
    }
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    let mut c = Confusion::default();
    for (p, y) in preds.iter().zip(labels) {
        match (y.is_hate(), p.is_hate()) {
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (true, true) => c.tp += 1,
        }
    }
    Ok(c)
}

/// Unweighted mean of the class-0 and class-1 F1 scores.
pub fn macro_f1(preds: &[Label], labels: &[Label]) -> Result<f64> {
    if preds.is_empty() && labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(confusion(preds, labels)?.macro_f1())
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
