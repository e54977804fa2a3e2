//! Wilcoxon signed-rank test on paired samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size for which the null distribution is enumerated.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// `after` tends to be smaller than `before`.
    Less,
    /// `after` tends to be larger than `before`.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `after - before`.
    pub w: f64,
    pub p: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Nonzero differences, their ranks and `W+`.
fn signed_ranks(pairs: &[PairedSample]) -> Result<(Vec<f64>, f64)> {
    if let Some(p) = pairs.iter().find(|p| !p.before.is_finite() || !p.after.is_finite()) {
        return Err(Error::Contract(format!("non-finite pair {p:?}")));
    }
    let diffs: Vec<f64> = pairs.iter().map(|p| p.after - p.before).filter(|&d| d != 0.0).collect();
    if diffs.is_empty() {
        return Err(Error::Degenerate("all paired differences are zero".into()));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    Ok((ranks, w))
}

/// Exact `(P(W+ >= w), P(W+ <= w))` under the null, by dynamic programming
/// over the doubled (integer) ranks.
fn exact_tails(ranks: &[f64], w: f64) -> (f64, f64) {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let w2 = (2.0 * w).round() as usize;
    let upper: f64 = counts[w2..].iter().sum();
    let lower: f64 = counts[..=w2].iter().sum();
    (upper / all, lower / all)
}

/// Normal approximation with tie and continuity corrections.
fn normal_tails(ranks: &[f64], w: f64) -> (f64, f64) {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut ties = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        let t = j as f64;
        ties += t * t * t - t;
        i += j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
    let sd = var.sqrt();
    let phi = Normal::new(0.0, 1.0).expect("standard normal");
    let upper = phi.sf((w - mean - 0.5) / sd);
    let lower = phi.cdf((w - mean + 0.5) / sd);
    (upper, lower)
}

fn finish(w: f64, n: usize, (upper, lower): (f64, f64), alt: Alternative, exact: bool) -> WilcoxonResult {
    let p = match alt {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    };
    WilcoxonResult {
        w,
        p: p.clamp(0.0, 1.0),
        n,
        exact,
    }
}

/// Signed-rank test of `after - before`: exact for `n <= 25`, normal
/// approximation beyond.
pub fn wilcoxon_signed_rank(pairs: &[PairedSample], alt: Alternative) -> Result<WilcoxonResult> {
    let (ranks, w) = signed_ranks(pairs)?;
    let exact = ranks.len() <= EXACT_MAX_N;
    let tails = if exact { exact_tails(&ranks, w) } else { normal_tails(&ranks, w) };
    Ok(finish(w, ranks.len(), tails, alt, exact))
}

/// Exact null distribution regardless of `n`.
pub fn wilcoxon_exact(pairs: &[PairedSample], alt: Alternative) -> Result<WilcoxonResult> {
    let (ranks, w) = signed_ranks(pairs)?;
    Ok(finish(w, ranks.len(), exact_tails(&ranks, w), alt, true))
}

/// Normal approximation regardless of `n`.
pub fn wilcoxon_normal(pairs: &[PairedSample], alt: Alternative) -> Result<WilcoxonResult> {
    let (ranks, w) = signed_ranks(pairs)?;
    Ok(finish(w, ranks.len(), normal_tails(&ranks, w), alt, false))
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn pairs(before: &[f64], after: &[f64]) -> Vec<PairedSample> {
    before
        .iter()
        .zip(after)
        .map(|(&before, &after)| PairedSample { before, after })
        .collect()
}
