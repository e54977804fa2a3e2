//! `train`: fit the toy network and write its checkpoint and loss trace.

use std::time::Instant;

use serde::Serialize;

use previewflow::field::{write_checkpoint, CheckpointHeader, Trainer};
use previewflow::Error;

use super::{init_out, wall_ms};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::{write_csv, write_json};

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    param_count: usize,
    initial_loss: f64,
    final_loss: f64,
    ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
}

fn rows(trace: &[f64]) -> Vec<LossRow> {
    trace.iter().enumerate().map(|(step, &loss)| LossRow { step, loss }).collect()
}

pub fn run(cfg: &ExperimentConfig) -> CliResult<()> {
    init_out(cfg)?;
    let start = Instant::now();
    let section = &cfg.train;
    let mut trainer = Trainer::new(&section.dataset, section.architecture(), section.config.clone())?;
    while !trainer.is_done() {
        if let Err(e) = trainer.step() {
            // Keep every completed step plus the diverging one.
            let mut trace = rows(trainer.trace());
            if let Error::Training { step, loss } = &e {
                trace.push(LossRow { step: *step, loss: *loss });
            }
            write_csv(&cfg.out.join("loss.csv"), &trace)?;
            return Err(CliError::from(e));
        }
    }
    let (net, report) = trainer.finish();
    write_csv(&cfg.out.join("loss.csv"), &rows(&report.trace))?;
    let header = CheckpointHeader::for_net(&net, Some(section.config.clone()), Some(section.dataset.clone()));
    write_checkpoint(&cfg.out.join("model.ckpt"), &header, &net)?;
    let summary = TrainSummary {
        steps: report.steps,
        param_count: header.param_count,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        ratio: report.ratio(),
        wall_ms: wall_ms(start),
    };
    write_json(&cfg.out.join("train.json"), &summary)?;
    eprintln!(
        "trained {} steps: held-out loss {:.4} -> {:.4}",
        report.steps, report.initial_loss, report.final_loss
    );
    Ok(())
}
