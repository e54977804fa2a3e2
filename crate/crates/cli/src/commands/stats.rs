//! `stats`: the paired commutator-norm study and the velocity cosine trace.

use rayon::prelude::*;
use serde::Serialize;

use previewflow::experiment::seed_noise;
use previewflow::metrics::{cosine_trace, CosinePoint};
use previewflow::study::{cg_effect_study, TestSummary};
use previewflow::{sample_hr, Error, LatentGrid, PreviewConfig};

use super::{init_out, pool};
use crate::config::{ExperimentConfig, Model, StatsTest};
use crate::error::CliResult;
use crate::output::{write_csv, write_json};

#[derive(Serialize)]
struct CgSummary<'a> {
    seeds: usize,
    tests: &'a [TestSummary],
}

#[derive(Serialize)]
struct CosineSummary<'a> {
    seeds: usize,
    downsample_step: usize,
    trace: &'a [CosinePoint],
}

fn run_cg(cfg: &ExperimentConfig, model: &Model, seeds: &[u64]) -> CliResult<()> {
    let report = cg_effect_study(&model.field, &cfg.preview, model.shape, &model.condition, seeds, cfg.jobs)?;
    write_csv(&cfg.out.join("stats_cg.csv"), &report.rows)?;
    write_json(
        &cfg.out.join("stats_cg.json"),
        &CgSummary {
            seeds: seeds.len(),
            tests: &report.tests,
        },
    )?;
    for t in &report.tests {
        eprintln!(
            "{:<16} {:?}: n {} mean {:+.4} W {} p {:.3e}",
            t.metric, t.alternative, t.n, t.mean, t.w, t.p
        );
    }
    Ok(())
}

fn run_cosine(cfg: &ExperimentConfig, model: &Model, seeds: &[u64]) -> CliResult<()> {
    let velocities = pool(cfg.jobs)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let c = PreviewConfig {
                    seed,
                    condition: model.condition.for_seed(seed),
                    ..cfg.preview.clone()
                };
                let (h, w, d) = model.shape;
                let run = sample_hr(&model.field, &c, &seed_noise(seed, h, w, d)?)?;
                run.trajectory
                    .map(|t| t.velocities)
                    .ok_or_else(|| Error::Contract("full-resolution run kept no trajectory".into()))
            })
            .collect::<previewflow::Result<Vec<Vec<LatentGrid>>>>()
    })?;
    let refs: Vec<&[LatentGrid]> = velocities.iter().map(Vec::as_slice).collect();
    let trace = cosine_trace(&refs, cfg.preview.downsample_step, cfg.stats.span)?;
    write_csv(&cfg.out.join("stats_cosine.csv"), &trace)?;
    write_json(
        &cfg.out.join("stats_cosine.json"),
        &CosineSummary {
            seeds: seeds.len(),
            downsample_step: cfg.preview.downsample_step,
            trace: &trace,
        },
    )?;
    for p in &trace {
        eprintln!("cos(v_D, v_D+{}) = {:.4} ± {:.4}", p.k, p.mean, p.std);
    }
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    let model = Model::resolve(cfg)?;
    let seeds = cfg.seeds.resolve();
    init_out(cfg)?;
    if matches!(cfg.stats.test, StatsTest::Cg | StatsTest::All) {
        run_cg(cfg, &model, &seeds)?;
    }
    if matches!(cfg.stats.test, StatsTest::Cosine | StatsTest::All) {
        run_cosine(cfg, &model, &seeds)?;
    }
    Ok(())
}
