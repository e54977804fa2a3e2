//! Commutator-zero guidance: nudges the reduced latent so that the field's
//! velocity there matches the downsampled stored full-resolution velocity,
//! `x <- x + alpha (g - v(x, t))`, or with the opposite sign for fields whose
//! Jacobian is mostly negative (see [`GuidanceSign`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::grid::{LatentGrid, TimestepSchedule};
use crate::operator::SelectionOperator;

/// Direction of the update. With `Plus` the residual contracts by
/// `1 - alpha` when `dv/dx = I`; with `Minus` it does so when `dv/dx = -I`.
/// A velocity `data - noise` behaves like the latter on noise-dominated
/// directions (`dv/dx ~ -I / (1 - t)`), which is where `Minus` shrinks the
/// commutator; `Plus` is the form written for a `noise - data` velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceSign {
    #[default]
    Plus,
    Minus,
}

impl GuidanceSign {
    pub fn factor(self) -> f64 {
        match self {
            GuidanceSign::Plus => 1.0,
            GuidanceSign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceState {
    /// `g = D* v(x_{t_D}, t_D)`.
    pub target: LatentGrid,
    /// Step index `D` of the first guided step.
    pub step: usize,
    pub t_start: f64,
    /// `t_{D+m+1}`: guided steps satisfy `t_start <= t < t_end`.
    pub t_end: f64,
    pub m: usize,
    pub alpha: f64,
    pub k: usize,
    pub sign: GuidanceSign,
}

impl GuidanceState {
    pub fn new(target: LatentGrid, schedule: &TimestepSchedule, step: usize, m: usize, alpha: f64, k: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!("alpha {alpha} must be finite and >= 0")));
        }
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if step + m + 1 > schedule.steps() {
            return Err(Error::Config(format!(
                "guided window {step}..={} exceeds {} steps",
                step + m,
                schedule.steps()
            )));
        }
        Ok(Self {
            target,
            step,
            t_start: schedule.t(step),
            t_end: schedule.t(step + m + 1),
            m,
            alpha,
            k,
            sign: GuidanceSign::Plus,
        })
    }

    pub fn with_sign(self, sign: GuidanceSign) -> Self {
        Self { sign, ..self }
    }

    /// Whether step `i` is guided (`D <= i <= D + m`).
    pub fn covers(&self, i: usize) -> bool {
        (self.step..=self.step + self.m).contains(&i)
    }
}

/// `D* v_stored`.
pub fn guidance_target(op: &SelectionOperator, v_stored: &LatentGrid) -> Result<LatentGrid> {
    op.apply(v_stored)
}

/// `k` fixed-point updates at time `t`; returns the corrected latent and the
/// number of field evaluations spent (always `k`).
pub fn guidance_step(
    x: &LatentGrid,
    state: &GuidanceState,
    field: &(impl VelocityField + ?Sized),
    t: f64,
    cond: &[f32],
) -> Result<(LatentGrid, usize)> {
    x.same_shape(&state.target)?;
    if !(t >= state.t_start && t < state.t_end) {
        return Err(Error::Contract(format!(
            "time {t} outside guided interval [{}, {})",
            state.t_start, state.t_end
        )));
    }
    let alpha = (state.sign.factor() * state.alpha) as f32;
    let mut cur = x.clone();
    for _ in 0..state.k {
        let v = field.eval(&cur, t, cond)?;
        if alpha != 0.0 {
            let r = state.target.sub(&v)?;
            cur = cur.axpy(alpha, &r)?;
        }
    }
    Ok((cur, state.k))
}
