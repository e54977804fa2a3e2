use serde::{Deserialize, Serialize};

use crate::commutator::Strategy;
use crate::error::{Error, Result};
use crate::grid::TimestepSchedule;
use crate::guidance::GuidanceSign;
use crate::operator::FamilyMode;

use super::cost::CostModel;

/// Knobs of a preview run. Defaults: `N = 30`, `D = 10`, `m = 5`,
/// `alpha = 0.04`, `s = 2`, `k = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreviewConfig {
    /// Number of integration steps `N`.
    pub steps: usize,
    /// Explicit times `t_0..t_N`; linear when absent.
    pub schedule: Option<TimestepSchedule>,
    /// Step index `D` at which the latent is downsampled.
    pub downsample_step: usize,
    pub scale: usize,
    pub m: usize,
    pub alpha: f64,
    pub k: usize,
    /// Commutator-zero guidance on or off.
    pub guidance: bool,
    pub guidance_sign: GuidanceSign,
    pub strategy: Strategy,
    pub family_mode: FamilyMode,
    pub cost_model: CostModel,
    pub seed: u64,
    pub condition: Vec<f32>,
}

impl Default for PreviewConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            schedule: None,
            downsample_step: 10,
            scale: 2,
            m: 5,
            alpha: 0.04,
            k: 1,
            guidance: true,
            guidance_sign: GuidanceSign::Plus,
            strategy: Strategy::Argmin,
            family_mode: FamilyMode::PerBlock,
            cost_model: CostModel::Linear,
            seed: 0,
            condition: Vec::new(),
        }
    }
}

impl PreviewConfig {
    pub fn schedule(&self) -> Result<TimestepSchedule> {
        match &self.schedule {
            Some(s) if s.steps() != self.steps => Err(Error::Config(format!(
                "schedule has {} steps but N = {}",
                s.steps(),
                self.steps
            ))),
            Some(s) => Ok(s.clone()),
            None => TimestepSchedule::linear(self.steps),
        }
    }

    /// Checks the invariants for an `h x w` full-resolution grid.
    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        self.schedule()?;
        let (n, d) = (self.steps, self.downsample_step);
        if !(0 < d && d < n) {
            return Err(Error::Config(format!("need 0 < D < N, got D = {d}, N = {n}")));
        }
        if d + self.m + 1 > n {
            return Err(Error::Config(format!("need D + m + 1 <= N, got {d} + {} + 1 > {n}", self.m)));
        }
        if self.scale < 2 {
            return Err(Error::Config(format!("scale {} must be >= 2", self.scale)));
        }
        if h % self.scale != 0 || w % self.scale != 0 {
            return Err(Error::Divisibility { h, w, scale: self.scale });
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {} must be finite and >= 0", self.alpha)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether the full-resolution velocity at step `D` must be evaluated.
    pub fn stores_velocity(&self) -> bool {
        self.guidance || self.strategy.uses_norms()
    }
}
