//! Per-seed experiment plumbing shared by the studies and the CLI: seeded
//! inputs, the set of methods to compare, and their scores against the
//! full-resolution sample from the same noise.

use serde::{Deserialize, Serialize};

use crate::commutator::Strategy;
use crate::error::Result;
use crate::field::{ToyDataset, VelocityField};
use crate::grid::{gaussian_noise, LatentGrid};
use crate::metrics::{area_resize, clamp_unit, piqe, psnr, PiqeParams};
use crate::rng::{SeededRng, Stream};
use crate::sampler::{sample_baseline, sample_hr, sample_preview, BaselineKind, PreviewConfig, Run};

/// Initial noise of a seed.
pub fn seed_noise(seed: u64, h: usize, w: usize, d: usize) -> Result<LatentGrid> {
    gaussian_noise(h, w, d, &mut SeededRng::for_stream(seed, Stream::Noise))
}

/// Where per-seed condition vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSource {
    Fixed(Vec<f32>),
    /// Drawn from the dataset's condition distribution on the condition
    /// stream of each seed.
    Dataset(ToyDataset),
}

impl ConditionSource {
    pub fn for_seed(&self, seed: u64) -> Vec<f32> {
        match self {
            ConditionSource::Fixed(c) => c.clone(),
            ConditionSource::Dataset(ds) => ds.sample_condition(&mut SeededRng::for_stream(seed, Stream::Condition)),
        }
    }
}

/// One method in a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Preview sampling with the given strategy and guidance switch; other
    /// knobs come from the base config.
    Preview { strategy: Strategy, guidance: bool },
    Baseline(BaselineKind),
}

impl Method {
    pub const OURS: Method = Method::Preview {
        strategy: Strategy::Argmin,
        guidance: true,
    };

    pub fn name(self) -> String {
        match self {
            Method::Preview {
                strategy: Strategy::Argmin,
                guidance: true,
            } => "ours".into(),
            Method::Preview { strategy, guidance } => {
                format!("preview-{}{}", strategy.name(), if guidance { "" } else { "-nocg" })
            }
            Method::Baseline(k) => k.name().into(),
        }
    }

    pub fn run(self, field: &(impl VelocityField + ?Sized), cfg: &PreviewConfig, x0: &LatentGrid, hr: &Run) -> Result<Run> {
        let mut run = match self {
            Method::Preview { strategy, guidance } => {
                let c = PreviewConfig {
                    strategy,
                    guidance,
                    ..cfg.clone()
                };
                sample_preview(field, &c, x0, Some(hr))?
            }
            Method::Baseline(kind) => sample_baseline(kind, field, cfg, x0, Some(hr))?,
        };
        run.report.method = self.name();
        Ok(run)
    }
}

/// Scores of one method on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodScore {
    pub seed: u64,
    pub method: String,
    /// PSNR (peak 1) against the block-averaged full-resolution sample,
    /// both clamped to `[0, 1]`.
    pub psnr: f64,
    pub piqe: f64,
    pub cost_units: f64,
    pub speedup: f64,
    pub norm_t_d: Option<f64>,
    pub norm_t_dm: Option<f64>,
}

/// The full-resolution sample reduced to the comparison resolution.
pub fn reference_image(hr: &LatentGrid, s: usize) -> Result<LatentGrid> {
    area_resize(&clamp_unit(hr), s)
}

/// Brings `grid` to the reference resolution and scores it.
pub fn score_grid(grid: &LatentGrid, reference: &LatentGrid) -> Result<(f64, f64)> {
    let img = clamp_unit(grid);
    let img = if img.h() == reference.h() {
        img
    } else {
        area_resize(&img, img.h() / reference.h())?
    };
    let p = psnr(&img, reference, 1.0)?;
    let q = if img.h() >= 8 && img.w() >= 8 && matches!(img.d(), 1 | 3) {
        piqe(&img, PiqeParams::default())?.score
    } else {
        f64::NAN
    };
    Ok((p, q))
}

#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub hr: Run,
    pub runs: Vec<Run>,
    pub scores: Vec<MethodScore>,
}

/// Runs the full-resolution reference and every method on one seed.
pub fn compare_seed(
    field: &(impl VelocityField + ?Sized),
    base: &PreviewConfig,
    shape: (usize, usize, usize),
    cond: &ConditionSource,
    seed: u64,
    methods: &[Method],
) -> Result<SeedOutcome> {
    let cfg = PreviewConfig {
        seed,
        condition: cond.for_seed(seed),
        ..base.clone()
    };
    let x0 = seed_noise(seed, shape.0, shape.1, shape.2)?;
    let hr = sample_hr(field, &cfg, &x0)?;
    let reference = reference_image(&hr.grid, cfg.scale)?;
    let mut runs = Vec::with_capacity(methods.len());
    let mut scores = Vec::with_capacity(methods.len());
    for &m in methods {
        let run = m.run(field, &cfg, &x0, &hr)?;
        let (p, q) = score_grid(&run.grid, &reference)?;
        scores.push(MethodScore {
            seed,
            method: run.report.method.clone(),
            psnr: p,
            piqe: q,
            cost_units: run.report.cost_units,
            speedup: run.report.speedup,
            norm_t_d: run.report.norm_t_d,
            norm_t_dm: run.report.norm_t_dm,
        });
        runs.push(run);
    }
    Ok(SeedOutcome { hr, runs, scores })
}
