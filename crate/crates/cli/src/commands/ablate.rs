//! `ablate`: sweeps one axis (selection strategy, guidance on/off, the
//! `m x alpha` grid, or `k`) against a shared full-resolution sample per seed.

use rayon::prelude::*;
use serde::Serialize;

use previewflow::experiment::{reference_image, score_grid, seed_noise, Method};
use previewflow::{sample_hr, PreviewConfig, Strategy};

use super::{init_out, pool};
use crate::config::{Axis, ExperimentConfig, Model};
use crate::error::CliResult;
use crate::output::{mean_std, write_csv, write_json};

struct Variant {
    label: String,
    cfg: PreviewConfig,
    method: Method,
}

fn variants(cfg: &ExperimentConfig) -> Vec<Variant> {
    let base = &cfg.preview;
    let preview = |strategy, guidance| Method::Preview { strategy, guidance };
    let a = &cfg.ablate;
    match a.axis {
        Axis::Selection => Strategy::ALL
            .iter()
            .map(|&s| Variant {
                label: s.name().into(),
                cfg: base.clone(),
                method: preview(s, base.guidance),
            })
            .collect(),
        Axis::Cg => [false, true]
            .iter()
            .map(|&g| Variant {
                label: if g { "cg-on" } else { "cg-off" }.into(),
                cfg: base.clone(),
                method: preview(base.strategy, g),
            })
            .collect(),
        Axis::MAlpha => a
            .m_values
            .iter()
            .flat_map(|&m| {
                a.alpha_values.iter().map(move |&alpha| Variant {
                    label: format!("m={m},alpha={alpha}"),
                    cfg: PreviewConfig { m, alpha, ..base.clone() },
                    method: preview(base.strategy, true),
                })
            })
            .collect(),
        Axis::K => a
            .k_values
            .iter()
            .map(|&k| Variant {
                label: format!("k={k}"),
                cfg: PreviewConfig { k, ..base.clone() },
                method: preview(base.strategy, true),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize)]
struct SeedRow {
    seed: u64,
    variant: String,
    psnr: f64,
    piqe: f64,
    cost_units: f64,
    speedup: f64,
    norm_t_d: Option<f64>,
    norm_t_dm: Option<f64>,
    compliance_relative: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
struct VariantRow {
    axis: &'static str,
    variant: String,
    strategy: &'static str,
    guidance: bool,
    m: usize,
    alpha: f64,
    k: usize,
    n: usize,
    psnr_mean: f64,
    psnr_std: f64,
    piqe_mean: f64,
    piqe_std: f64,
    cost_units: f64,
    speedup: f64,
    norm_t_d_mean: f64,
    norm_t_dm_mean: f64,
    compliance_relative_mean: f64,
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let model = Model::resolve(cfg)?;
    let variants = variants(cfg);
    for v in &variants {
        v.cfg.validate(model.shape.0, model.shape.1)?;
    }
    let seeds = cfg.seeds.resolve();
    init_out(cfg)?;
    let per_seed = pool(cfg.jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cond = model.condition.for_seed(seed);
                let base = PreviewConfig {
                    seed,
                    condition: cond.clone(),
                    ..cfg.preview.clone()
                };
                let (h, w, d) = model.shape;
                let x0 = seed_noise(seed, h, w, d)?;
                let hr = sample_hr(&model.field, &base, &x0)?;
                let reference = reference_image(&hr.grid, base.scale)?;
                variants
                    .iter()
                    .map(|v| {
                        let c = PreviewConfig {
                            seed,
                            condition: cond.clone(),
                            ..v.cfg.clone()
                        };
                        let run = v.method.run(&model.field, &c, &x0, &hr)?;
                        let (psnr, piqe) = score_grid(&run.grid, &reference)?;
                        let r = run.report;
                        Ok(SeedRow {
                            seed,
                            variant: v.label.clone(),
                            psnr,
                            piqe,
                            cost_units: r.cost_units,
                            speedup: r.speedup,
                            norm_t_d: r.norm_t_d,
                            norm_t_dm: r.norm_t_dm,
                            compliance_relative: r.compliance_relative,
                        })
                    })
                    .collect::<CliResult<Vec<_>>>()
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let seed_rows: Vec<SeedRow> = per_seed.into_iter().flatten().collect();
    let opt = |x: Option<f64>| x.unwrap_or(f64::NAN);
    let rows: Vec<VariantRow> = variants
        .iter()
        .map(|v| {
            let of: Vec<&SeedRow> = seed_rows.iter().filter(|r| r.variant == v.label).collect();
            let (n, psnr_mean, psnr_std) = mean_std(of.iter().map(|r| r.psnr));
            let (_, piqe_mean, piqe_std) = mean_std(of.iter().map(|r| r.piqe));
            let (strategy, guidance) = match v.method {
                Method::Preview { strategy, guidance } => (strategy, guidance),
                Method::Baseline(_) => unreachable!("sweeps vary preview methods only"),
            };
            VariantRow {
                axis: cfg.ablate.axis.name(),
                variant: v.label.clone(),
                strategy: strategy.name(),
                guidance,
                m: v.cfg.m,
                alpha: v.cfg.alpha,
                k: v.cfg.k,
                n,
                psnr_mean,
                psnr_std,
                piqe_mean,
                piqe_std,
                cost_units: mean_std(of.iter().map(|r| r.cost_units)).1,
                speedup: mean_std(of.iter().map(|r| r.speedup)).1,
                norm_t_d_mean: mean_std(of.iter().map(|r| opt(r.norm_t_d))).1,
                norm_t_dm_mean: mean_std(of.iter().map(|r| opt(r.norm_t_dm))).1,
                compliance_relative_mean: mean_std(of.iter().map(|r| opt(r.compliance_relative))).1,
            }
        })
        .collect();
    write_csv(&cfg.out.join("ablate.csv"), &rows)?;
    write_csv(&cfg.out.join("ablate_seeds.csv"), &seed_rows)?;
    write_json(&cfg.out.join("ablate.json"), &rows)?;
    for r in &rows {
        eprintln!("{:<22} psnr {:6.2} ± {:5.2}  cost {:6.3}", r.variant, r.psnr_mean, r.psnr_std, r.cost_units);
    }
    Ok(())
}
