//! McNemar's test on paired binary predictions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarMethod {
    ExactBinomial,
    ChiSquareCorrected,
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Discordant count: A correct, B wrong.
    pub b: u64,
    /// Discordant count: A wrong, B correct.
    pub c: u64,
    pub statistic: f64,
    pub p: f64,
    pub method: McNemarMethod,
}

fn binom_cdf_half(k: u64, n: u64) -> f64 {
    // sum_{i<=k} C(n,i) (1/2)^n, computed in log space for stability
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_c = 0.0; // ln C(n,0)
    let mut total = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        total += (ln_c + ln_half_n).exp();
    }
    total
}

/// Compare two classifiers on identical samples. Exact two-sided
/// binomial for b+c < 25, continuity-corrected chi-square otherwise.
pub fn mcnemar(preds_a: &[u8], preds_b: &[u8], labels: &[u8]) -> Result<McNemarResult> {
    if preds_a.len() != preds_b.len() || preds_a.len() != labels.len() {
        return Err(Error::Domain("paired predictions must have equal length".into()));
    }
    let mut b = 0u64;
    let mut c = 0u64;
    for ((&pa, &pb), &y) in preds_a.iter().zip(preds_b).zip(labels) {
        let a_ok = pa == y;
        let b_ok = pb == y;
        if a_ok && !b_ok {
            b += 1;
        } else if !a_ok && b_ok {
            c += 1;
        }
    }
    let n = b + c;
    if n == 0 {
        return Ok(McNemarResult {
            b,
            c,
            statistic: 0.0,
            p: 1.0,
            method: McNemarMethod::Degenerate,
        });
    }
    if n < 25 {
        let k = b.min(c);
        let mut p = 2.0 * binom_cdf_half(k, n);
        // central term double-counted when b == c
        if b == c {
            p = 1.0;
        }
        p = p.min(1.0);
        Ok(McNemarResult {
            b,
            c,
            statistic: k as f64,
            p,
            method: McNemarMethod::ExactBinomial,
        })
    } else {
        let diff = b.abs_diff(c) as f64;
        let stat = (diff - 1.0).max(0.0).powi(2) / n as f64;
        let chi = ChiSquared::new(1.0).expect("chi-square df=1");
        let p = 1.0 - chi.cdf(stat);
        Ok(McNemarResult {
            b,
            c,
            statistic: stat,
            p,
            method: McNemarMethod::ChiSquareCorrected,
        })
    }
}
