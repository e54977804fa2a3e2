//! `preview`: per seed, the full-resolution sample, our preview and every
//! configured baseline, with scores against the full-resolution sample.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use previewflow::experiment::{compare_seed, Method, MethodScore};
use previewflow::io::{write_grid, write_png};
use previewflow::{LatentGrid, RunReport};

use super::{init_out, pool, seed_dir, wall_ms};
use crate::config::{ExperimentConfig, Model};
use crate::error::{CliError, CliResult};
use crate::output::{mean_std, write_csv, write_json};

/// Everything recorded for one seed, written as `seeds/<seed>/report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub seed: u64,
    pub condition: Vec<f32>,
    pub hr: RunReport,
    pub runs: Vec<RunReport>,
    pub scores: Vec<MethodScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub method: String,
    pub psnr: f64,
    pub piqe: f64,
    pub cost_units: f64,
    pub speedup: f64,
    pub hr_evals: usize,
    pub lr_evals: usize,
    pub norm_t_d: Option<f64>,
    pub norm_t_dm: Option<f64>,
    pub compliance_relative: Option<f64>,
}

/// Per-method aggregate over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub piqe_mean: f64,
    pub piqe_std: f64,
    pub cost_units: f64,
    pub speedup: f64,
    pub norm_t_d_mean: f64,
    pub norm_t_dm_mean: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    seeds: Vec<u64>,
    methods: &'a [MethodSummary],
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
}

pub fn grid_file(dir: &Path, name: &str) -> std::path::PathBuf {
    dir.join(format!("{name}.f32"))
}

pub fn methods(cfg: &ExperimentConfig) -> Vec<Method> {
    std::iter::once(Method::OURS)
        .chain(cfg.baselines.iter().map(|&b| Method::Baseline(b)))
        .collect()
}

fn export(dir: &Path, name: &str, grid: &LatentGrid, images: bool) -> CliResult<()> {
    write_grid(&grid_file(dir, name), grid)?;
    if images {
        write_png(&dir.join(format!("{name}.png")), grid)?;
    }
    Ok(())
}

pub fn summarize(rows: &[SummaryRow]) -> Vec<MethodSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let of: Vec<&SummaryRow> = rows.iter().filter(|r| r.method == name).collect();
            let (n, psnr_mean, psnr_std) = mean_std(of.iter().map(|r| r.psnr));
            let (_, piqe_mean, piqe_std) = mean_std(of.iter().map(|r| r.piqe));
            MethodSummary {
                method: name.into(),
                n,
                psnr_mean,
                psnr_std,
                piqe_mean,
                piqe_std,
                cost_units: mean_std(of.iter().map(|r| r.cost_units)).1,
                speedup: mean_std(of.iter().map(|r| r.speedup)).1,
                norm_t_d_mean: mean_std(of.iter().map(|r| r.norm_t_d.unwrap_or(f64::NAN))).1,
                norm_t_dm_mean: mean_std(of.iter().map(|r| r.norm_t_dm.unwrap_or(f64::NAN))).1,
            }
        })
        .collect()
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let model = Model::resolve(cfg)?;
    if cfg.export_images && !matches!(model.shape.2, 1 | 3) {
        return Err(CliError::usage(format!("image export needs 1 or 3 channels, got {}", model.shape.2)));
    }
    let methods = methods(cfg);
    let seeds = cfg.seeds.resolve();
    init_out(cfg)?;
    let start = Instant::now();
    let reports = pool(cfg.jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let t = Instant::now();
                let outcome = compare_seed(&model.field, &cfg.preview, model.shape, &model.condition, seed, &methods)?;
                let dir = seed_dir(&cfg.out, seed);
                export(&dir, "hr", &outcome.hr.grid, cfg.export_images)?;
                for run in &outcome.runs {
                    export(&dir, &run.report.method, &run.grid, cfg.export_images)?;
                }
                let report = SeedReport {
                    seed,
                    condition: model.condition.for_seed(seed),
                    hr: outcome.hr.report,
                    runs: outcome.runs.into_iter().map(|r| r.report).collect(),
                    scores: outcome.scores,
                    wall_ms: wall_ms(t),
                };
                write_json(&dir.join("report.json"), &report)?;
                Ok(report)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    let rows: Vec<SummaryRow> = reports
        .iter()
        .flat_map(|rep| {
            rep.scores.iter().zip(&rep.runs).map(move |(s, r)| SummaryRow {
                seed: rep.seed,
                method: s.method.clone(),
                psnr: s.psnr,
                piqe: s.piqe,
                cost_units: s.cost_units,
                speedup: s.speedup,
                hr_evals: r.hr_evals,
                lr_evals: r.lr_evals,
                norm_t_d: s.norm_t_d,
                norm_t_dm: s.norm_t_dm,
                compliance_relative: r.compliance_relative,
            })
        })
        .collect();
    write_csv(&cfg.out.join("summary.csv"), &rows)?;
    let methods = summarize(&rows);
    write_json(
        &cfg.out.join("summary.json"),
        &Summary {
            seeds,
            methods: &methods,
            wall_ms: wall_ms(start),
        },
    )?;
    for m in &methods {
        eprintln!(
            "{:<14} psnr {:6.2} ± {:5.2}  cost {:5.2}  speedup {:.3}x",
            m.method, m.psnr_mean, m.psnr_std, m.cost_units, m.speedup
        );
    }
    Ok(())
}
