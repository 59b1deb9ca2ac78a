//! AUC (midrank formulation), ROC curves, and accuracy-optimal cut-offs.

use serde::{Deserialize, Serialize};

use super::ScoredSet;
use crate::error::Result;

/// Midranks of `values` (1-based); tied values share the mean of the
/// ranks they would occupy.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite scores"));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum identity:
/// (sum of positive midranks - n+(n+ + 1)/2) / (n+ * n-).
/// Ties receive half credit, matching pair counting.
pub fn auc(set: &ScoredSet) -> Result<f64> {
    set.require_both_classes()?;
    let scores: Vec<f64> = set.entries.iter().map(|e| e.probability).collect();
    let ranks = midranks(&scores);
    let n_pos = set.n_positive() as f64;
    let n_neg = set.n_negative() as f64;
    let pos_rank_sum: f64 = set
        .entries
        .iter()
        .zip(&ranks)
        .filter(|(e, _)| e.label == 1)
        .map(|(_, &r)| r)
        .sum();
    Ok((pos_rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points at every distinct score, from (0,0) to (1,1). Trapezoidal
/// area over the points equals `auc` exactly.
pub fn roc_curve(set: &ScoredSet) -> Result<Vec<RocPoint>> {
    set.require_both_classes()?;
    let mut entries: Vec<(f64, u8)> = set
        .entries
        .iter()
        .map(|e| (e.probability, e.label))
        .collect();
    // descending score: thresholds relax left to right
    entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let n_pos = set.n_positive() as f64;
    let n_neg = set.n_negative() as f64;
    // finite sentinel above any probability (infinity is not JSON-safe)
    let mut points = vec![RocPoint {
        threshold: f64::MAX,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < entries.len() {
        let score = entries[i].0;
        while i < entries.len() && entries[i].0 == score {
            if entries[i].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: score,
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a list of ROC points.
#[cfg(test)]
pub(crate) fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

/// Cut-off maximizing plain accuracy, scanned over midpoints between
/// adjacent distinct scores plus the bounds {0, 1}; ties resolve to the
/// smallest cut-off. Decisions use `probability > cutoff`.
pub fn optimal_cutoff(set: &ScoredSet) -> Result<f64> {
    set.require_both_classes()?;
    let mut scores: Vec<f64> = set.entries.iter().map(|e| e.probability).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
    scores.dedup();

    let mut candidates = vec![0.0];
    candidates.extend(scores.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    candidates.push(1.0);

    let n = set.len() as f64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &tau in &candidates {
        let correct = set
            .entries
            .iter()
            .filter(|e| u8::from(e.probability > tau) == e.label)
            .count() as f64;
        let acc = correct / n;
        if acc > best.0 + 1e-15 {
            best = (acc, tau);
        }
    }
    Ok(best.1)
}
