//! `compare`: re-scores the grids stored by `preview` and tabulates
//! per-method mean and standard deviation.

use std::fs;
use std::path::{Path, PathBuf};

use previewflow::experiment::{reference_image, score_grid};
use previewflow::io::read_grid;
use previewflow::metrics::{area_resize, clamp_unit};
use previewflow::LatentGrid;

use serde::Deserialize;

use super::preview::grid_file;
use super::seed_dir;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::mean_std;
use crate::MetricArg;

#[derive(Debug, Clone)]
pub struct CompareOptions {
    /// Reference run whose same-method grids replace the block-averaged
    /// full-resolution sample.
    pub against: Option<PathBuf>,
    pub metrics: Vec<MetricArg>,
}

/// The parts of a seed report that comparisons use.
#[derive(Deserialize)]
struct StoredReport {
    runs: Vec<StoredRun>,
}

#[derive(Deserialize)]
struct StoredRun {
    method: String,
    cost_units: f64,
    speedup: f64,
}

struct Scored {
    method: String,
    psnr: f64,
    piqe: f64,
    cost: f64,
    speedup: f64,
}

impl Scored {
    fn get(&self, m: MetricArg) -> f64 {
        match m {
            MetricArg::Psnr => self.psnr,
            MetricArg::Piqe => self.piqe,
            MetricArg::Cost => self.cost,
            MetricArg::Speedup => self.speedup,
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn run_seeds(run: &Path) -> CliResult<Vec<u64>> {
    let dir = run.join("seeds");
    let entries = fs::read_dir(&dir).map_err(|e| CliError::io(format!("{}: not a preview run ({e})", run.display())))?;
    let mut seeds = Vec::new();
    for e in entries {
        let e = e?;
        if let Some(s) = e.file_name().to_str().and_then(|n| n.parse::<u64>().ok()) {
            seeds.push(s);
        }
    }
    seeds.sort_unstable();
    if seeds.is_empty() {
        return Err(CliError::io(format!("{}: run has no seeds", run.display())));
    }
    Ok(seeds)
}

fn load_paired(run: &Path, seed: u64, name: &str) -> CliResult<LatentGrid> {
    let path = grid_file(&seed_dir(run, seed), name);
    if !path.exists() {
        return Err(CliError::io(format!(
            "unpaired run {}: seed {seed} has no '{name}' grid",
            run.display()
        )));
    }
    Ok(read_grid(&path)?)
}

/// Scores every method of every seed in `run`.
fn score_run(run: &Path, opts: &CompareOptions) -> CliResult<Vec<Scored>> {
    let cfg: ExperimentConfig = read_json(&run.join("config.json"))?;
    let s = cfg.preview.scale;
    let mut out = Vec::new();
    for seed in run_seeds(run)? {
        let report: StoredReport = read_json(&seed_dir(run, seed).join("report.json"))?;
        let hr = load_paired(run, seed, "hr")?;
        let (lr_h, lr_w) = (hr.h() / s, hr.w() / s);
        let own_reference = reference_image(&hr, s)?;
        for r in &report.runs {
            let grid = load_paired(run, seed, &r.method)?;
            let reference = match &opts.against {
                None => own_reference.clone(),
                Some(ref_run) => {
                    let g = clamp_unit(&load_paired(ref_run, seed, &r.method)?);
                    if g.h() == lr_h && g.w() == lr_w {
                        g
                    } else {
                        area_resize(&g, g.h() / lr_h)?
                    }
                }
            };
            let (psnr, piqe) = score_grid(&grid, &reference)?;
            out.push(Scored {
                method: r.method.clone(),
                psnr,
                piqe,
                cost: r.cost_units,
                speedup: r.speedup,
            });
        }
    }
    Ok(out)
}

/// CSV with one row per (run, method): `n` and `<metric>_mean`,
/// `<metric>_std` for each requested metric.
pub fn compare_runs(runs: &[PathBuf], opts: &CompareOptions) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run".to_string(), "method".into(), "n".into()];
    for m in &opts.metrics {
        header.push(format!("{}_mean", m.name()));
        header.push(format!("{}_std", m.name()));
    }
    w.write_record(&header)?;
    for run in runs {
        let scored = score_run(run, opts)?;
        let mut names: Vec<&str> = Vec::new();
        for s in &scored {
            if !names.contains(&s.method.as_str()) {
                names.push(&s.method);
            }
        }
        for name in names {
            let of: Vec<&Scored> = scored.iter().filter(|s| s.method == name).collect();
            let mut rec = vec![run.display().to_string(), name.to_string(), of.len().to_string()];
            for &m in &opts.metrics {
                let (_, mean, std) = mean_std(of.iter().map(|s| s.get(m)));
                rec.push(mean.to_string());
                rec.push(std.to_string());
            }
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| CliError::io(e.to_string()))
}
