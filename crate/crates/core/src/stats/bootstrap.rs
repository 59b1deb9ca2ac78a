//! Percentile bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ScoredEntry, ScoredSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    /// Resamples redrawn because the metric was undefined on them
    /// (e.g. a single-class resample for AUC).
    pub redraws: u64,
}

/// Linear-interpolation quantile of a sorted slice (position p*(n-1)).
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// 95% percentile interval from `b` resamples with replacement.
///
/// The metric may be undefined on a resample (returns Err); such
/// resamples are redrawn and counted. If more than half of all draws
/// are undefined the interval is reported as a failure.
pub fn bootstrap_ci<F>(metric: F, set: &ScoredSet, b: u64, seed: u64) -> Result<BootstrapCi>
where
    F: Fn(&ScoredSet) -> Result<f64>,
{
    if b == 0 {
        return Err(Error::InvalidParam("bootstrap needs B >= 1".into()));
    }
    if set.is_empty() {
        return Err(Error::Domain("bootstrap on empty set".into()));
    }
    // input-order invariance: resample indices refer to id-sorted entries
    let mut entries = set.entries.clone();
    entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = entries.len();
    let mut values = Vec::with_capacity(b as usize);
    let mut redraws = 0u64;
    let mut draws = 0u64;
    while values.len() < b as usize {
        let resample: Vec<ScoredEntry> =
            (0..n).map(|_| entries[rng.gen_range(0..n)].clone()).collect();
        draws += 1;
        match metric(&ScoredSet { entries: resample }) {
            Ok(v) => values.push(v),
            Err(_) => {
                redraws += 1;
                if redraws > draws / 2 && draws >= 2 * b {
                    return Err(Error::Numerical(
                        "metric undefined on more than half of bootstrap resamples".into(),
                    ));
                }
            }
        }
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(BootstrapCi {
        lo: quantile_sorted(&values, 0.025),
        hi: quantile_sorted(&values, 0.975),
        redraws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{auc, basic_metrics, confusion};
    use rand::Rng;

    fn accuracy_metric(set: &ScoredSet) -> Result<f64> {
        let m = confusion(set, 0.5)?;
        basic_metrics(&m)
            .accuracy
            .ok_or_else(|| Error::Domain("accuracy undefined".into()))
    }

    #[test]
    fn degenerate_set_zero_width() {
        let set = ScoredSet::from_pairs(&[(0.9, 1); 12]).unwrap();
        let ci = bootstrap_ci(accuracy_metric, &set, 200, 1).unwrap();
        assert_eq!(ci.lo, 1.0);
        assert_eq!(ci.hi, 1.0);
    }

    #[test]
    fn deterministic_per_seed_and_order_invariant() {
        let set = ScoredSet::from_pairs(&[
            (0.9, 1),
            (0.4, 0),
            (0.6, 1),
            (0.2, 0),
            (0.7, 0),
            (0.8, 1),
        ])
        .unwrap();
        let a = bootstrap_ci(auc, &set, 300, 7).unwrap();
        let b = bootstrap_ci(auc, &set, 300, 7).unwrap();
        assert_eq!(a, b);
        let mut reordered = set.clone();
        reordered.entries.reverse();
        let c = bootstrap_ci(auc, &reordered, 300, 7).unwrap();
        assert_eq!(a, c);
        let d = bootstrap_ci(auc, &set, 300, 8).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn interval_brackets_point_estimate_usually() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut bracketed = 0;
        for _ in 0..100 {
            let n = rng.gen_range(20..=60);
            let set = loop {
                let pairs: Vec<(f64, u8)> = (0..n)
                    .map(|_| {
                        let l = u8::from(rng.gen_bool(0.5));
                        let p: f64 = (rng.gen::<f64>() * 0.7 + l as f64 * 0.3).clamp(0.0, 1.0);
                        (p, l)
                    })
                    .collect();
                let s = ScoredSet::from_pairs(&pairs).unwrap();
                if s.n_positive() > 0 && s.n_negative() > 0 {
                    break s;
                }
            };
            let point = auc(&set).unwrap();
            let ci = bootstrap_ci(auc, &set, 400, rng.gen()).unwrap();
            if ci.lo <= point && point <= ci.hi {
                bracketed += 1;
            }
        }
        assert!(bracketed >= 95, "only {bracketed}/100 bracketed");
    }

    #[test]
    fn duplicated_data_narrows_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut widths = (0.0, 0.0);
        for trial in 0..20 {
            let set = crate::stats::ranking::tests::random_set(&mut rng, 40, None);
            let mut doubled = set.clone();
            for (i, e) in set.entries.iter().enumerate() {
                let mut e = e.clone();
                e.sample_id = format!("dup{i}");
                doubled.entries.push(e);
            }
            let ci1 = bootstrap_ci(auc, &set, 400, trial).unwrap();
            let ci2 = bootstrap_ci(auc, &doubled, 400, trial).unwrap();
            widths.0 += ci1.hi - ci1.lo;
            widths.1 += ci2.hi - ci2.lo;
        }
        assert!(widths.1 < widths.0, "mean width did not narrow: {widths:?}");
    }
}
