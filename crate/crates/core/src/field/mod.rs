//! Velocity fields `v(x, t | cond)`.
//!
//! Two closed-form fields serve as exact oracles (a per-pixel channel-affine
//! map and a 3x3 box blur); [`ToyNet`] is the small trainable convolutional
//! field used for the statistical experiments.

mod checkpoint;
mod data;
mod net;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointHeader};
pub(crate) use data::block_mean;
pub use data::{ToyDataset, ToySample};
pub use net::{Architecture, ToyNet};
pub use train::{grad_check, train_toy, Downscale, TrainConfig, TrainReport, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{fmt_shape, LatentGrid};

/// A velocity field evaluable on grids of any spatial size.
pub trait VelocityField: Send + Sync {
    /// Velocity at `(x, t)` under condition `cond`. The result has the shape
    /// of `x` and carries time `t`.
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid>;

    /// Length of the condition vector this field expects.
    fn cond_arity(&self) -> usize {
        0
    }

    /// Channel count the field requires, if it constrains one.
    fn channels(&self) -> Option<usize> {
        None
    }
}

pub(crate) fn check_eval_args(
    field: &(impl VelocityField + ?Sized),
    x: &LatentGrid,
    t: f64,
    cond: &[f32],
) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("time {t} outside [0, 1]")));
    }
    if cond.len() != field.cond_arity() {
        return Err(Error::Contract(format!(
            "condition has {} values, field expects {}",
            cond.len(),
            field.cond_arity()
        )));
    }
    if let Some(d) = field.channels() {
        if x.d() != d {
            return Err(Error::shape(format!("{d} channels"), fmt_shape(x.shape())));
        }
    }
    Ok(())
}

/// `v(x) = A x + b` applied independently at every pixel; `A` mixes channels only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelAffine {
    d: usize,
    matrix: Vec<f32>,
    bias: Vec<f32>,
}

impl ChannelAffine {
    pub fn new(matrix: Vec<Vec<f32>>, bias: Vec<f32>) -> Result<Self> {
        let d = bias.len();
        if d == 0 || matrix.len() != d || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Config("channel-affine field needs a square d x d matrix and d biases".into()));
        }
        Ok(Self {
            d,
            matrix: matrix.into_iter().flatten().collect(),
            bias,
        })
    }

    /// `v(x) = a x`.
    pub fn scalar(d: usize, a: f32) -> Self {
        let mut matrix = vec![0.0; d * d];
        for c in 0..d {
            matrix[c * d + c] = a;
        }
        Self {
            d,
            matrix,
            bias: vec![0.0; d],
        }
    }

    /// `v(x) = c`.
    pub fn constant(bias: Vec<f32>) -> Self {
        let d = bias.len();
        Self {
            d,
            matrix: vec![0.0; d * d],
            bias,
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            d: self.d,
            matrix: self.matrix.iter().map(|v| -v).collect(),
            bias: self.bias.iter().map(|v| -v).collect(),
        }
    }
}

impl VelocityField for ChannelAffine {
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid> {
        check_eval_args(self, x, t, cond)?;
        let d = self.d;
        let mut out = vec![0.0f32; x.len()];
        for (src, dst) in x.data().chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            for (c, o) in dst.iter_mut().enumerate() {
                let row = &self.matrix[c * d..(c + 1) * d];
                *o = row.iter().zip(src).map(|(a, v)| a * v).sum::<f32>() + self.bias[c];
            }
        }
        Ok(LatentGrid::from_raw(x.h(), x.w(), d, t, out))
    }

    fn channels(&self) -> Option<usize> {
        Some(self.d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// Mirror without repeating the edge sample (`-1 -> 1`).
    Reflect,
    /// Periodic wrap-around; makes the blur equivariant to cyclic shifts.
    Circular,
}

/// `v(x) = gain * box3x3(x)`, channel by channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBlur {
    pub gain: f32,
    pub padding: Padding,
}

impl BoxBlur {
    pub fn new(gain: f32, padding: Padding) -> Self {
        Self { gain, padding }
    }

    fn wrap(&self, i: isize, n: usize) -> usize {
        let n = n as isize;
        let j = match self.padding {
            Padding::Circular => i.rem_euclid(n),
            Padding::Reflect if n == 1 => 0,
            Padding::Reflect if i < 0 => -i,
            Padding::Reflect if i >= n => 2 * n - 2 - i,
            Padding::Reflect => i,
        };
        j.clamp(0, n - 1) as usize
    }
}

impl VelocityField for BoxBlur {
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid> {
        check_eval_args(self, x, t, cond)?;
        let (h, w, d) = x.shape();
        let scale = self.gain / 9.0;
        let mut out = vec![0.0f32; x.len()];
        for y in 0..h {
            for xx in 0..w {
                for c in 0..d {
                    let mut acc = 0.0f32;
                    for dy in -1..=1 {
                        let sy = self.wrap(y as isize + dy, h);
                        for dx in -1..=1 {
                            let sx = self.wrap(xx as isize + dx, w);
                            acc += x.get(sy, sx, c);
                        }
                    }
                    out[(y * w + xx) * d + c] = acc * scale;
                }
            }
        }
        Ok(LatentGrid::from_raw(h, w, d, t, out))
    }
}

/// `-v`, for antisymmetry checks.
#[derive(Debug, Clone)]
pub struct Negated<F>(pub F);

impl<F: VelocityField> VelocityField for Negated<F> {
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid> {
        Ok(self.0.eval(x, t, cond)?.scaled(-1.0))
    }

    fn cond_arity(&self) -> usize {
        self.0.cond_arity()
    }

    fn channels(&self) -> Option<usize> {
        self.0.channels()
    }
}

/// The closed set of field kinds the harness can construct.
#[derive(Debug, Clone)]
pub enum Field {
    ChannelAffine(ChannelAffine),
    Blur(BoxBlur),
    ToyNet(ToyNet),
}

impl Field {
    pub fn kind(&self) -> &'static str {
        match self {
            Field::ChannelAffine(_) => "analytic-channel-affine",
            Field::Blur(_) => "analytic-blur",
            Field::ToyNet(_) => "toy-net",
        }
    }

    pub fn as_toy_net(&self) -> Option<&ToyNet> {
        match self {
            Field::ToyNet(n) => Some(n),
            _ => None,
        }
    }
}

impl VelocityField for Field {
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid> {
        match self {
            Field::ChannelAffine(f) => f.eval(x, t, cond),
            Field::Blur(f) => f.eval(x, t, cond),
            Field::ToyNet(f) => f.eval(x, t, cond),
        }
    }

    fn cond_arity(&self) -> usize {
        match self {
            Field::ChannelAffine(f) => f.cond_arity(),
            Field::Blur(f) => f.cond_arity(),
            Field::ToyNet(f) => f.cond_arity(),
        }
    }

    fn channels(&self) -> Option<usize> {
        match self {
            Field::ChannelAffine(f) => f.channels(),
            Field::Blur(f) => f.channels(),
            Field::ToyNet(f) => f.channels(),
        }
    }
}

/// Rectified-flow conditional target `x1 - x0` (independent of `t`).
pub fn cfm_target(x0: &LatentGrid, x1: &LatentGrid) -> Result<LatentGrid> {
    x1.sub(x0)
}

/// Point on the straight path `(1 - t) x0 + t x1`.
pub fn interpolate(x0: &LatentGrid, x1: &LatentGrid, t: f64) -> Result<LatentGrid> {
    x0.same_shape(x1)?;
    let (a, b) = ((1.0 - t) as f32, t as f32);
    let data = x0.data().iter().zip(x1.data()).map(|(p, q)| a * p + b * q).collect();
    Ok(LatentGrid::from_raw(x0.h(), x0.w(), x0.d(), t, data))
}

/// Mean squared error between `v(x_t, t)` and `x1 - x0` over all entries.
pub fn cfm_loss(
    field: &(impl VelocityField + ?Sized),
    x0: &LatentGrid,
    x1: &LatentGrid,
    t: f64,
    cond: &[f32],
) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("time {t} outside [0, 1]")));
    }
    let xt = interpolate(x0, x1, t)?;
    let v = field.eval(&xt, t, cond)?;
    let sum: f64 = v
        .data()
        .iter()
        .zip(x0.data().iter().zip(x1.data()))
        .map(|(&p, (&a, &b))| {
            let r = p as f64 - (b as f64 - a as f64);
            r * r
        })
        .sum();
    Ok(sum / v.len() as f64)
}
