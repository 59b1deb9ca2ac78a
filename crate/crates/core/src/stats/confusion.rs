//! Confusion matrices and threshold metrics.

use serde::{Deserialize, Serialize};

use super::ScoredSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Rates derived from a confusion matrix. Undefined ratios (0/0) are
/// reported as `None` rather than coerced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicMetrics {
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub mcc: Option<f64>,
}

/// Apply cut-off `tau` (decision rule: probability > tau) and count.
pub fn confusion(set: &ScoredSet, tau: f64) -> Result<ConfusionMatrix> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidParam(format!("cut-off {tau} outside [0,1]")));
    }
    let mut m = ConfusionMatrix {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for e in &set.entries {
        let pred = e.probability > tau;
        match (pred, e.label == 1) {
            (true, true) => m.tp += 1,
            (true, false) => m.fp += 1,
            (false, false) => m.tn += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(m)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

pub fn basic_metrics(m: &ConfusionMatrix) -> BasicMetrics {
    let sensitivity = ratio(m.tp, m.tp + m.fn_);
    let specificity = ratio(m.tn, m.tn + m.fp);
    let balanced_accuracy = match (sensitivity, specificity) {
        (Some(se), Some(sp)) => Some((se + sp) / 2.0),
        _ => None,
    };
    let accuracy = ratio(m.tp + m.tn, m.total());
    let mcc = {
        let (tp, fp, tn, fn_) = (m.tp as f64, m.fp as f64, m.tn as f64, m.fn_ as f64);
        let denom = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
        if denom == 0.0 {
            None
        } else {
            Some((tp * tn - fp * fn_) / denom)
        }
    };
    BasicMetrics {
        accuracy,
        balanced_accuracy,
        sensitivity,
        specificity,
        mcc,
    }
}
