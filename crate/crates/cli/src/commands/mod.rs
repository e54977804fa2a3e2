//! Subcommand implementations.

mod ablate;
mod compare;
mod preview;
mod stats;
mod train;

use std::fs;
use std::path::Path;

use crate::config::{CommandKind, ExperimentConfig, SeedSpec};
use crate::error::{CliError, CliResult};
use crate::output::{deterministic, write_json};
use crate::{Command, Common};

pub use compare::{compare_runs, CompareOptions};

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train(c) => train::run(&prepare(&c, CommandKind::Train)?),
        Command::Preview(c) => preview::run(&prepare(&c, CommandKind::Preview)?),
        Command::Compare {
            runs,
            against,
            metrics,
            out,
        } => {
            let opts = CompareOptions {
                against,
                metrics: if metrics.is_empty() { crate::MetricArg::ALL.to_vec() } else { metrics },
            };
            let table = compare_runs(&runs, &opts)?;
            if let Some(dir) = out {
                crate::output::write_csv_raw(&dir.join("compare.csv"), &table)?;
            }
            print!("{}", String::from_utf8_lossy(&table));
            Ok(())
        }
        Command::Ablate { common, axis } => {
            let mut cfg = prepare(&common, CommandKind::Ablate)?;
            if let Some(a) = axis {
                cfg.ablate.axis = a;
            }
            ablate::run(&cfg)
        }
        Command::Stats { common, test } => {
            let mut cfg = prepare(&common, CommandKind::Stats)?;
            if let Some(t) = test {
                cfg.stats.test = t;
            }
            stats::run(&cfg)
        }
    }
}

/// Loads the config (or defaults), applies flag overrides and checks it.
pub fn prepare(common: &Common, cmd: CommandKind) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.check_command(cmd)?;
    cfg.command = Some(cmd);
    if let Some(s) = &common.seeds {
        cfg.seeds = SeedSpec::parse(s)?;
    }
    if let Some(j) = common.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(c) = common.cost_model {
        cfg.preview.cost_model = c.into();
    }
    if common.export_images {
        cfg.export_images = true;
    }
    cfg.validate()?;
    if deterministic() {
        cfg.jobs = 1;
    }
    Ok(cfg)
}

/// Creates the output directory and writes the resolved config into it.
pub(crate) fn init_out(cfg: &ExperimentConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(format!("{}: {e}", cfg.out.display())))?;
    write_json(&cfg.out.join("config.json"), cfg)
}

pub(crate) fn pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

/// Wall time in milliseconds, omitted in deterministic mode.
pub(crate) fn wall_ms(start: std::time::Instant) -> Option<f64> {
    (!deterministic()).then(|| start.elapsed().as_secs_f64() * 1e3)
}

pub(crate) fn seed_dir(out: &Path, seed: u64) -> std::path::PathBuf {
    out.join("seeds").join(seed.to_string())
}
