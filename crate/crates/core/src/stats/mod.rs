//! Evaluation mathematics: ROC/AUC, cut-off optimization, confusion
//! metrics, bootstrap confidence intervals, DeLong's paired AUC test,
//! McNemar's test, and the follow-up progression-ratio analysis.

mod bootstrap;
mod confusion;
mod delong;
mod mcnemar;
mod progression;
mod ranking;
mod report;

pub use bootstrap::{bootstrap_ci, BootstrapCi};
pub use confusion::{basic_metrics, confusion, BasicMetrics, ConfusionMatrix};
pub use delong::{delong_test, DelongResult};
pub use mcnemar::{mcnemar, McNemarMethod, McNemarResult};
pub use progression::{progression_ratios, ProgressionCounts, ProgressionRatios};
pub use ranking::{auc, optimal_cutoff, roc_curve, RocPoint};
pub use report::{build_report, ClassProbabilitySummary, EvalReport, MetricWithCi};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model probabilities paired with ground-truth binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub entries: Vec<ScoredEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntry {
    pub sample_id: String,
    pub probability: f64,
    pub label: u8,
}

impl ScoredSet {
    pub fn new(entries: Vec<ScoredEntry>) -> Result<Self> {
        for e in &entries {
            if !(0.0..=1.0).contains(&e.probability) {
                return Err(Error::Domain(format!(
                    "probability {} outside [0,1] for {}",
                    e.probability, e.sample_id
                )));
            }
            if e.label > 1 {
                return Err(Error::Domain(format!(
                    "label {} not binary for {}",
                    e.label, e.sample_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: &[(f64, u8)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .enumerate()
                .map(|(i, &(p, l))| ScoredEntry {
                    sample_id: format!("s{i}"),
                    probability: p,
                    label: l,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.entries.iter().filter(|e| e.label == 1).count()
    }

    pub fn n_negative(&self) -> usize {
        self.entries.len() - self.n_positive()
    }

    pub(crate) fn require_both_classes(&self) -> Result<()> {
        if self.n_positive() == 0 || self.n_negative() == 0 {
            Err(Error::Domain(
                "AUC-family statistics need at least one positive and one negative".into(),
            ))
        } else {
            Ok(())
        }
    }
}

/// Probability turned into a decision at cut-off `cutoff`, with the
/// confidence flag (probability > 0.7 or < 0.3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub probability: f64,
    pub cutoff: f64,
    pub predicted: u8,
    pub confident: bool,
}

pub const CONFIDENT_POSITIVE_THRESHOLD: f64 = 0.7;

impl PredictionRecord {
    pub fn from_probability(sample_id: String, probability: f64, cutoff: f64) -> Self {
        let predicted = u8::from(probability > cutoff);
        let confident = probability > CONFIDENT_POSITIVE_THRESHOLD
            || probability < 1.0 - CONFIDENT_POSITIVE_THRESHOLD;
        Self {
            sample_id,
            probability,
            cutoff,
            predicted,
            confident,
        }
    }
}
