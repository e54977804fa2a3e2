//! Evaluation accounting in full-resolution units: one evaluation on the
//! full grid costs 1; a grid with a fraction `r` of the pixels costs `r`
//! (linear) or `r^2` (quadratic, attention-like).

use serde::{Deserialize, Serialize};

use super::config::PreviewConfig;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostModel {
    #[default]
    Linear,
    Quadratic,
}

impl CostModel {
    /// Cost of one evaluation on `pixels` relative to `full` pixels.
    pub fn eval_cost(self, pixels: usize, full: usize) -> f64 {
        let r = pixels as f64 / full as f64;
        match self {
            CostModel::Linear => r,
            CostModel::Quadratic => r * r,
        }
    }

    /// Cost of a reduced evaluation at scale `s`.
    pub fn lr_unit(self, s: usize) -> f64 {
        self.eval_cost(1, s * s)
    }

    pub fn name(self) -> &'static str {
        match self {
            CostModel::Linear => "linear",
            CostModel::Quadratic => "quadratic",
        }
    }
}

/// Running tally of charged evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalLedger {
    model: CostModel,
    full_pixels: usize,
    pub hr_evals: usize,
    pub lr_evals: usize,
    pub units: f64,
}

impl EvalLedger {
    pub fn new(model: CostModel, full_pixels: usize) -> Self {
        Self {
            model,
            full_pixels,
            hr_evals: 0,
            lr_evals: 0,
            units: 0.0,
        }
    }

    /// Records `count` evaluations on grids of `pixels` pixels.
    pub fn charge(&mut self, pixels: usize, count: usize) {
        if pixels == self.full_pixels {
            self.hr_evals += count;
        } else {
            self.lr_evals += count;
        }
        self.units += count as f64 * self.model.eval_cost(pixels, self.full_pixels);
    }
}

/// Closed-form `(full evals, reduced evals, cost units)` of a preview run.
pub fn preview_cost(cfg: &PreviewConfig) -> (usize, usize, f64) {
    let (n, d, m, s, k) = (cfg.steps, cfg.downsample_step, cfg.m, cfg.scale, cfg.k);
    let hr = d + usize::from(cfg.stores_velocity());
    let select = if cfg.strategy.uses_norms() { s * s } else { 0 };
    let integrate = if cfg.guidance {
        (m + 1) * (k + 1) + (n - d - m - 1)
    } else {
        n - d
    };
    let lr = select + integrate;
    (hr, lr, hr as f64 + lr as f64 * cfg.cost_model.lr_unit(s))
}

/// Closed-form cost of full-resolution sampling with `n` steps.
pub fn full_cost(n: usize) -> f64 {
    n as f64
}
