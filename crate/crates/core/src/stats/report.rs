//! Per-dataset evaluation reports with bootstrap confidence intervals.

use serde::{Deserialize, Serialize};

use super::{
    auc, basic_metrics, bootstrap_ci, confusion, roc_curve, ConfusionMatrix, RocPoint, ScoredSet,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricWithCi {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Per-class probability summary (the confidence analysis: an ideal
/// model pushes probabilities toward the true label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilitySummary {
    pub label: u8,
    pub n: usize,
    pub mean_probability: f64,
    /// 10-bin histogram of probabilities over [0,1].
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub n: usize,
    pub cutoff: f64,
    pub auc: MetricWithCi,
    pub balanced_accuracy: MetricWithCi,
    pub sensitivity: MetricWithCi,
    pub specificity: MetricWithCi,
    pub accuracy: f64,
    pub mcc: Option<f64>,
    pub confusion: ConfusionMatrix,
    pub roc_points: Vec<RocPoint>,
    pub probability_summary: Vec<ClassProbabilitySummary>,
    pub bootstrap_replicates: u64,
    pub seed: u64,
}

fn metric_with_ci<F>(metric: F, set: &ScoredSet, b: u64, seed: u64) -> Result<MetricWithCi>
where
    F: Fn(&ScoredSet) -> Result<f64> + Copy,
{
    let value = metric(set)?;
    let ci = bootstrap_ci(metric, set, b, seed)?;
    Ok(MetricWithCi {
        value,
        ci_lo: ci.lo,
        ci_hi: ci.hi,
    })
}

fn class_summary(set: &ScoredSet, label: u8) -> ClassProbabilitySummary {
    let probs: Vec<f64> = set
        .entries
        .iter()
        .filter(|e| e.label == label)
        .map(|e| e.probability)
        .collect();
    let mut histogram = vec![0usize; 10];
    for &p in &probs {
        let bin = ((p * 10.0) as usize).min(9);
        histogram[bin] += 1;
    }
    ClassProbabilitySummary {
        label,
        n: probs.len(),
        mean_probability: if probs.is_empty() {
            0.0
        } else {
            probs.iter().sum::<f64>() / probs.len() as f64
        },
        histogram,
    }
}

/// Assemble the full evaluation report for one scored dataset at a fixed
/// cut-off (calibrated upstream on validation data).
pub fn build_report(
    dataset: &str,
    set: &ScoredSet,
    cutoff: f64,
    bootstrap_replicates: u64,
    seed: u64,
) -> Result<EvalReport> {
    set.require_both_classes()?;
    let matrix = confusion(set, cutoff)?;
    let metrics = basic_metrics(&matrix);

    let sens_fn = |s: &ScoredSet| -> Result<f64> {
        basic_metrics(&confusion(s, cutoff)?)
            .sensitivity
            .ok_or_else(|| Error::Domain("sensitivity undefined".into()))
    };
    let spec_fn = |s: &ScoredSet| -> Result<f64> {
        basic_metrics(&confusion(s, cutoff)?)
            .specificity
            .ok_or_else(|| Error::Domain("specificity undefined".into()))
    };
    let bal_fn = |s: &ScoredSet| -> Result<f64> {
        basic_metrics(&confusion(s, cutoff)?)
            .balanced_accuracy
            .ok_or_else(|| Error::Domain("balanced accuracy undefined".into()))
    };

    Ok(EvalReport {
        dataset: dataset.to_string(),
        n: set.len(),
        cutoff,
        auc: metric_with_ci(auc, set, bootstrap_replicates, seed)?,
        balanced_accuracy: metric_with_ci(bal_fn, set, bootstrap_replicates, seed.wrapping_add(1))?,
        sensitivity: metric_with_ci(sens_fn, set, bootstrap_replicates, seed.wrapping_add(2))?,
        specificity: metric_with_ci(spec_fn, set, bootstrap_replicates, seed.wrapping_add(3))?,
        accuracy: metrics.accuracy.expect("non-empty set"),
        mcc: metrics.mcc,
        confusion: matrix,
        roc_points: roc_curve(set)?,
        probability_summary: vec![class_summary(set, 0), class_summary(set, 1)],
        bootstrap_replicates,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_scorer_report() {
        let pairs: Vec<(f64, u8)> = (0..20)
            .map(|i| if i < 10 { (0.95, 1) } else { (0.05, 0) })
            .collect();
        let set = ScoredSet::from_pairs(&pairs).unwrap();
        let r = build_report("toy", &set, 0.5, 200, 1).unwrap();
        assert_eq!(r.auc.value, 1.0);
        assert_eq!((r.auc.ci_lo, r.auc.ci_hi), (1.0, 1.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn anti_perfect_scorer() {
        let pairs: Vec<(f64, u8)> = (0..20)
            .map(|i| if i < 10 { (0.05, 1) } else { (0.95, 0) })
            .collect();
        let set = ScoredSet::from_pairs(&pairs).unwrap();
        let r = build_report("toy", &set, 0.5, 100, 1).unwrap();
        assert_eq!(r.auc.value, 0.0);
    }

    #[test]
    fn balanced_accuracy_cross_check() {
        let pairs = [
            (0.9, 1),
            (0.6, 1),
            (0.4, 1),
            (0.7, 0),
            (0.3, 0),
            (0.1, 0),
        ];
        let set = ScoredSet::from_pairs(&pairs).unwrap();
        let r = build_report("toy", &set, 0.5, 100, 9).unwrap();
        let b = basic_metrics(&r.confusion);
        let expect = (b.sensitivity.unwrap() + b.specificity.unwrap()) / 2.0;
        assert!((r.balanced_accuracy.value - expect).abs() <= 1e-12);
        assert!(r.auc.ci_lo <= r.auc.value && r.auc.value <= r.auc.ci_hi);
    }
}
