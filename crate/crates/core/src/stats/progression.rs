//! Progression analysis on baseline-negative patients: how much more
//! often do confident false positives progress within the follow-up
//! horizon.
//!
//! Two ratios are reported. `risk_ratio` divides the progression
//! proportion in the confident-FP group by the proportion among all
//! baseline-negatives; this is the arithmetic behind the published
//! follow-up numbers (12/30 vs 25/135 gives 2.16). `odds_ratio` is the
//! classical 2x2 cross-product of {confident-FP vs rest} x {progressed
//! vs not}, which is a different quantity.

use serde::{Deserialize, Serialize};

use super::PredictionRecord;
use crate::error::{Error, Result};
use crate::manifest::FollowUpManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressionCounts {
    /// Confident false positives at baseline.
    pub group_size: u64,
    /// Progressors within the confident-FP group.
    pub group_progressors: u64,
    /// All baseline-negative patients.
    pub total: u64,
    /// Progressors among all baseline-negatives.
    pub total_progressors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressionRatios {
    pub counts: ProgressionCounts,
    /// Group proportion over population proportion; `None` when the
    /// confident group is empty.
    pub risk_ratio: Option<f64>,
    /// Katz log-method 95% CI for the risk ratio.
    pub rr_ci: Option<(f64, f64)>,
    /// Cross-product odds ratio of the group-vs-rest 2x2 table.
    pub odds_ratio: Option<f64>,
    /// Woolf log-method 95% CI for the odds ratio.
    pub or_ci: Option<(f64, f64)>,
    pub status: String,
}

const Z95: f64 = 1.96;

/// Ratios from raw counts. Exposed so published counts can be checked
/// directly without synthesizing records.
pub fn ratios_from_counts(counts: ProgressionCounts) -> Result<ProgressionRatios> {
    let ProgressionCounts {
        group_size,
        group_progressors,
        total,
        total_progressors,
    } = counts;
    if group_progressors > group_size
        || total_progressors > total
        || group_size > total
        || group_progressors > total_progressors
        || total_progressors - group_progressors > total - group_size
    {
        return Err(Error::Domain("inconsistent progression counts".into()));
    }
    if group_size == 0 {
        return Ok(ProgressionRatios {
            counts,
            risk_ratio: None,
            rr_ci: None,
            odds_ratio: None,
            or_ci: None,
            status: "no confident false positives; ratios undefined".into(),
        });
    }
    if total_progressors == 0 {
        return Ok(ProgressionRatios {
            counts,
            risk_ratio: None,
            rr_ci: None,
            odds_ratio: None,
            or_ci: None,
            status: "no progressors in population; ratios undefined".into(),
        });
    }

    let p_group = group_progressors as f64 / group_size as f64;
    let p_total = total_progressors as f64 / total as f64;
    let rr = p_group / p_total;

    // Katz log SE: sqrt(1/a - 1/n1 + 1/c - 1/n2)
    let rr_ci = if group_progressors > 0 {
        let se = (1.0 / group_progressors as f64 - 1.0 / group_size as f64
            + 1.0 / total_progressors as f64
            - 1.0 / total as f64)
            .sqrt();
        let ln_rr = rr.ln();
        Some(((ln_rr - Z95 * se).exp(), (ln_rr + Z95 * se).exp()))
    } else {
        None
    };

    // 2x2 table: group vs rest, progressed vs not
    let a = group_progressors as f64;
    let b = (group_size - group_progressors) as f64;
    let c = (total_progressors - group_progressors) as f64;
    let d = ((total - group_size) - (total_progressors - group_progressors)) as f64;
    let (odds_ratio, or_ci) = if a > 0.0 && b > 0.0 && c > 0.0 && d > 0.0 {
        let or = (a * d) / (b * c);
        let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
        let ln_or = or.ln();
        (
            Some(or),
            Some(((ln_or - Z95 * se).exp(), (ln_or + Z95 * se).exp())),
        )
    } else {
        (None, None)
    };

    Ok(ProgressionRatios {
        counts,
        risk_ratio: Some(rr),
        rr_ci,
        odds_ratio,
        or_ci,
        status: "ok".into(),
    })
}

/// Follow-up analysis on baseline predictions restricted to
/// baseline-negative patients.
pub fn progression_ratios(
    baseline: &[PredictionRecord],
    followup: &FollowUpManifest,
    conf_threshold: f64,
) -> Result<ProgressionRatios> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::InvalidParam(format!(
            "confidence threshold {conf_threshold} outside [0,1]"
        )));
    }
    let mut counts = ProgressionCounts {
        group_size: 0,
        group_progressors: 0,
        total: 0,
        total_progressors: 0,
    };
    for rec in baseline {
        let fu = followup
            .entries
            .iter()
            .find(|e| e.sample_id == rec.sample_id)
            .ok_or_else(|| {
                Error::Domain(format!("no follow-up entry for {}", rec.sample_id))
            })?;
        if fu.baseline_label != 0 {
            return Err(Error::Domain(format!(
                "sample {} is not baseline-negative",
                rec.sample_id
            )));
        }
        let progressed = fu.followup_label == 1;
        let confident_fp = rec.probability > conf_threshold;
        counts.total += 1;
        counts.total_progressors += u64::from(progressed);
        counts.group_size += u64::from(confident_fp);
        counts.group_progressors += u64::from(confident_fp && progressed);
    }
    ratios_from_counts(counts)
}
