//! DeLong's test for two correlated AUCs, via the fast midrank form of
//! the structural components.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ranking::midranks;
use super::ScoredSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongResult {
    pub auc_a: f64,
    pub auc_b: f64,
    pub z: f64,
    pub p: f64,
}

/// Structural components of one model's scores: V10 per positive (mean
/// of the Mann-Whitney kernel over negatives) and V01 per negative.
/// Computed from midranks in O(n log n).
fn structural_components(scores: &[f64], labels: &[u8]) -> (f64, Vec<f64>, Vec<f64>) {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    let m = pos.len() as f64;
    let n = neg.len() as f64;

    let all: Vec<f64> = pos.iter().chain(neg.iter()).copied().collect();
    let ranks_all = midranks(&all);
    let ranks_pos = midranks(&pos);
    let ranks_neg = midranks(&neg);

    let v10: Vec<f64> = (0..pos.len())
        .map(|i| (ranks_all[i] - ranks_pos[i]) / n)
        .collect();
    let v01: Vec<f64> = (0..neg.len())
        .map(|j| 1.0 - (ranks_all[pos.len() + j] - ranks_neg[j]) / m)
        .collect();
    let auc = v10.iter().sum::<f64>() / m;
    (auc, v10, v01)
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1.0)
}

/// Compare the AUCs of two models scoring the same samples.
pub fn delong_test(set_a: &ScoredSet, set_b: &ScoredSet) -> Result<DelongResult> {
    if set_a.len() != set_b.len() {
        return Err(Error::Domain(
            "DeLong test requires both models to score the same samples".into(),
        ));
    }
    // align B to A's sample order
    let mut b_sorted = set_b.entries.clone();
    b_sorted.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    let mut a_sorted = set_a.entries.clone();
    a_sorted.sort_by(|x, y| x.sample_id.cmp(&y.sample_id));
    for (ea, eb) in a_sorted.iter().zip(&b_sorted) {
        if ea.sample_id != eb.sample_id {
            return Err(Error::Domain("paired sets have mismatched sample ids".into()));
        }
        if ea.label != eb.label {
            return Err(Error::Domain(format!(
                "label disagreement on shared sample {}",
                ea.sample_id
            )));
        }
    }
    set_a.require_both_classes()?;

    let labels: Vec<u8> = a_sorted.iter().map(|e| e.label).collect();
    let scores_a: Vec<f64> = a_sorted.iter().map(|e| e.probability).collect();
    let scores_b: Vec<f64> = b_sorted.iter().map(|e| e.probability).collect();

    let (auc_a, v10_a, v01_a) = structural_components(&scores_a, &labels);
    let (auc_b, v10_b, v01_b) = structural_components(&scores_b, &labels);

    let m = v10_a.len() as f64;
    let n = v01_a.len() as f64;
    let s10 = covariance(&v10_a, &v10_a) + covariance(&v10_b, &v10_b)
        - 2.0 * covariance(&v10_a, &v10_b);
    let s01 = covariance(&v01_a, &v01_a) + covariance(&v01_b, &v01_b)
        - 2.0 * covariance(&v01_a, &v01_b);
    let var = s10 / m + s01 / n;

    let delta = auc_a - auc_b;
    let (z, p) = if var <= 0.0 {
        if delta.abs() < 1e-15 {
            (0.0, 1.0)
        } else {
            return Err(Error::Numerical(
                "degenerate DeLong variance with nonzero AUC difference".into(),
            ));
        }
    } else {
        let z = delta / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (z, 2.0 * (1.0 - normal.cdf(z.abs())))
    };

    Ok(DelongResult {
        auc_a,
        auc_b,
        z,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::auc;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn paired(
        rng: &mut impl Rng,
        n: usize,
        signal_a: f64,
        signal_b: f64,
    ) -> (ScoredSet, ScoredSet) {
        loop {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for i in 0..n {
                let label = u8::from(rng.gen_bool(0.5));
                let latent: f64 = rng.gen();
                let pa = (latent * (1.0 - signal_a) + label as f64 * signal_a
                    + 0.15 * rng.gen::<f64>())
                .clamp(0.0, 1.0);
                let pb = (latent * (1.0 - signal_b) + label as f64 * signal_b
                    + 0.15 * rng.gen::<f64>())
                .clamp(0.0, 1.0);
                a.push((format!("s{i:03}"), pa, label));
                b.push((format!("s{i:03}"), pb, label));
            }
            let mk = |v: &[(String, f64, u8)]| {
                ScoredSet::new(
                    v.iter()
                        .map(|(id, p, l)| crate::stats::ScoredEntry {
                            sample_id: id.clone(),
                            probability: *p,
                            label: *l,
                        })
                        .collect(),
                )
                .unwrap()
            };
            let sa = mk(&a);
            if sa.n_positive() > 1 && sa.n_negative() > 1 {
                return (sa, mk(&b));
            }
        }
    }

    #[test]
    fn identical_sets_p_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, _) = paired(&mut rng, 40, 0.3, 0.3);
        let r = delong_test(&a, &a).unwrap();
        assert_eq!(r.z, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn auc_matches_rank_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = paired(&mut rng, 60, 0.4, 0.2);
        let r = delong_test(&a, &b).unwrap();
        assert!((r.auc_a - auc(&a).unwrap()).abs() < 1e-12);
        assert!((r.auc_b - auc(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn planted_gap_significance_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = paired(&mut rng, 300, 0.8, 0.1);
        let r = delong_test(&a, &b).unwrap();
        assert!(r.p < 0.05, "large gap should be significant, p={}", r.p);

        let (a, b) = paired(&mut rng, 100, 0.3, 0.3);
        let r = delong_test(&a, &b).unwrap();
        assert!(r.p > 0.05, "no gap should be insignificant, p={}", r.p);
    }

    #[test]
    fn variance_nonnegative_p_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let (sa, sb) = (rng.gen::<f64>() * 0.5, rng.gen::<f64>() * 0.5);
            let (a, b) = paired(&mut rng, 30, sa, sb);
            let r = delong_test(&a, &b).unwrap();
            assert!((0.0..=1.0).contains(&r.p));
            assert!(r.z.is_finite());
        }
    }

    #[test]
    fn rejects_mismatched_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, mut b) = paired(&mut rng, 20, 0.3, 0.3);
        b.entries[0].sample_id = "other".into();
        assert!(delong_test(&a, &b).is_err());
    }
}
