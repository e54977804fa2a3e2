//! Paired commutator-norm study: does guidance shrink the norm between
//! `t_D` and `t_{D+m}`, and what happens without it?

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{seed_noise, ConditionSource};
use crate::field::VelocityField;
use crate::sampler::{sample_hr, sample_preview, PreviewConfig};
use crate::stats::{mean_std, pairs, wilcoxon_signed_rank, Alternative};

/// Fewest seeds the study accepts.
pub const MIN_SEEDS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub seed: u64,
    pub norm_t_d: f64,
    pub norm_t_dm_cg: f64,
    pub norm_t_dm_nocg: f64,
    pub stored_t_dm_cg: f64,
    pub stored_t_dm_nocg: f64,
}

/// One Wilcoxon test on `after - before`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub metric: String,
    pub alternative: Alternative,
    pub n: usize,
    /// Mean and standard deviation of `after - before`.
    pub mean: f64,
    pub std: f64,
    #[serde(rename = "W")]
    pub w: f64,
    pub p: f64,
    /// Every difference was zero; `p` is reported as 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub tests: Vec<TestSummary>,
}

impl StudyReport {
    pub fn test(&self, metric: &str, alt: Alternative) -> Option<&TestSummary> {
        self.tests.iter().find(|t| t.metric == metric && t.alternative == alt)
    }
}

/// Signed-rank test that reports all-zero differences instead of failing.
pub fn paired_test(metric: &str, before: &[f64], after: &[f64], alt: Alternative) -> Result<TestSummary> {
    let diffs: Vec<f64> = after.iter().zip(before).map(|(a, b)| a - b).collect();
    let (mean, std) = mean_std(&diffs);
    let (w, p, n, degenerate) = match wilcoxon_signed_rank(&pairs(before, after), alt) {
        Ok(r) => (r.w, r.p, r.n, false),
        Err(Error::Degenerate(_)) => (0.0, 1.0, 0, true),
        Err(e) => return Err(e),
    };
    Ok(TestSummary {
        metric: metric.into(),
        alternative: alt,
        n,
        mean,
        std,
        w,
        p,
        degenerate,
    })
}

fn study_row(
    field: &(impl VelocityField + ?Sized),
    base: &PreviewConfig,
    shape: (usize, usize, usize),
    cond: &ConditionSource,
    seed: u64,
) -> Result<StudyRow> {
    let cfg = PreviewConfig {
        seed,
        condition: cond.for_seed(seed),
        guidance: true,
        ..base.clone()
    };
    let x0 = seed_noise(seed, shape.0, shape.1, shape.2)?;
    let hr = sample_hr(field, &cfg, &x0)?;
    let on = sample_preview(field, &cfg, &x0, Some(&hr))?.report;
    let off_cfg = PreviewConfig { guidance: false, ..cfg };
    let off = sample_preview(field, &off_cfg, &x0, Some(&hr))?.report;
    let get = |v: Option<f64>| v.ok_or_else(|| Error::Contract("preview report lacks a norm".into()));
    Ok(StudyRow {
        seed,
        norm_t_d: get(on.norm_t_d)?,
        norm_t_dm_cg: get(on.norm_t_dm)?,
        norm_t_dm_nocg: get(off.norm_t_dm)?,
        stored_t_dm_cg: get(on.norm_t_dm_stored)?,
        stored_t_dm_nocg: get(off.norm_t_dm_stored)?,
    })
}

/// Paired commutator norms at `t_D` and `t_{D+m}` with and without
/// guidance, with one-sided signed-rank tests in both directions. Seeds run
/// on `jobs` threads; rows keep seed order.
pub fn cg_effect_study(
    field: &(impl VelocityField + ?Sized),
    base: &PreviewConfig,
    shape: (usize, usize, usize),
    cond: &ConditionSource,
    seeds: &[u64],
    jobs: usize,
) -> Result<StudyReport> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::Config(format!("study needs at least {MIN_SEEDS} seeds, got {}", seeds.len())));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| study_row(field, base, shape, cond, s))
            .collect::<Result<Vec<_>>>()
    })?;
    let before: Vec<f64> = rows.iter().map(|r| r.norm_t_d).collect();
    let cg: Vec<f64> = rows.iter().map(|r| r.norm_t_dm_cg).collect();
    let nocg: Vec<f64> = rows.iter().map(|r| r.norm_t_dm_nocg).collect();
    let mut tests = Vec::new();
    for (metric, after) in [("commutator-cg", &cg), ("commutator-nocg", &nocg)] {
        for alt in [Alternative::Less, Alternative::Greater] {
            tests.push(paired_test(metric, &before, after, alt)?);
        }
    }
    Ok(StudyReport { rows, tests })
}
