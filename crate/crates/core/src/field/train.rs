//! Conditional flow-matching training for [`ToyNet`]: momentum SGD with
//! global-norm clipping, mixed-resolution batches, and a fixed held-out
//! batch for loss reporting.

use serde::{Deserialize, Serialize};

use super::data::{block_mean, block_pick, ToyDataset};
use super::net::{Architecture, Real, ToyNet};
use super::{interpolate, Field};
use crate::error::{Error, Result};
use crate::grid::{gaussian_noise, LatentGrid};
use crate::rng::{SeededRng, Stream};

/// How reduced-resolution training images are made.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Downscale {
    /// Mean of each `s x s` block.
    BlockMean,
    /// One uniformly chosen pixel per block, as a selection operator does.
    Subsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Learning rate at the last step as a fraction of `lr` (cosine decay).
    pub final_lr_fraction: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub batch: usize,
    /// Share of training examples downscaled by `lr_scale` so the field
    /// also sees reduced-resolution grids.
    pub lr_fraction: f64,
    pub lr_scale: usize,
    pub lr_downscale: Downscale,
    pub eval_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 0.05,
            final_lr_fraction: 0.05,
            momentum: 0.9,
            clip_norm: 1.0,
            batch: 16,
            lr_fraction: 0.5,
            lr_scale: 2,
            lr_downscale: Downscale::Subsample,
            eval_batch: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("training needs steps >= 1".into()));
        }
        if self.batch == 0 || self.eval_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.clip_norm > 0.0) {
            return Err(Error::Config("need momentum in [0, 1) and clip_norm > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_fraction) || !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if self.lr_scale < 2 {
            return Err(Error::Config("lr_scale must be >= 2".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let p = if self.steps > 1 {
            step as f64 / (self.steps - 1) as f64
        } else {
            0.0
        };
        let f = self.final_lr_fraction + (1.0 - self.final_lr_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        self.lr * f
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean training-batch loss at every step.
    pub trace: Vec<f64>,
    /// Held-out loss before the first and after the last update.
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl TrainReport {
    pub fn ratio(&self) -> f64 {
        self.final_loss / self.initial_loss
    }
}

/// One regression example: input `x_t`, target `x1 - x0`.
struct Example {
    xt: LatentGrid,
    target: Vec<f32>,
    cond: Vec<f32>,
}

impl Example {
    fn build(x1: LatentGrid, cond: Vec<f32>, t: f64, noise: &mut SeededRng) -> Result<Self> {
        let x0 = gaussian_noise(x1.h(), x1.w(), x1.d(), noise)?;
        let xt = interpolate(&x0, &x1, t)?;
        let target = x1.data().iter().zip(x0.data()).map(|(a, b)| a - b).collect();
        Ok(Self { xt, target, cond })
    }
}

/// Mean over examples of the per-example mean squared error; accumulates
/// its gradient into `grad` when given.
fn loss_and_grad<T: Real>(net: &ToyNet, params: &[T], batch: &[Example], mut grad: Option<&mut [T]>) -> f64 {
    let b = batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let (h, w) = (ex.xt.h(), ex.xt.w());
        let x: Vec<T> = ex.xt.data().iter().map(|&v| T::from_f64(v as f64)).collect();
        let tape = net.forward(params, &x, h, w, ex.xt.t(), &ex.cond);
        let n = ex.target.len() as f64;
        let scale = T::from_f64(2.0 / (b * n));
        let mut sq = 0.0;
        let dout: Vec<T> = tape
            .out
            .iter()
            .zip(&ex.target)
            .map(|(&o, &y)| {
                let r = o - T::from_f64(y as f64);
                sq += r.to_f64() * r.to_f64();
                r * scale
            })
            .collect();
        total += sq / n;
        if let Some(g) = grad.as_deref_mut() {
            net.backward(params, &tape, &dout, h, w, g);
        }
    }
    total / b
}

/// Stateful trainer; one [`Trainer::step`] per optimizer update so callers
/// can keep the partial trace if training diverges.
pub struct Trainer<'a> {
    dataset: &'a ToyDataset,
    config: TrainConfig,
    net: ToyNet,
    velocity: Vec<f32>,
    grad: Vec<f32>,
    step: usize,
    trace: Vec<f64>,
    data_rng: SeededRng,
    time_rng: SeededRng,
    noise_rng: SeededRng,
    eval: Vec<Example>,
    initial_loss: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a ToyDataset, arch: Architecture, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        if arch.channels != dataset.d || arch.cond_arity != dataset.cond_arity() {
            return Err(Error::Config(format!(
                "architecture ({} channels, condition {}) does not fit dataset ({} channels, condition {})",
                arch.channels,
                arch.cond_arity,
                dataset.d,
                dataset.cond_arity()
            )));
        }
        let net = ToyNet::init(arch, config.seed)?;
        let mut rng = SeededRng::for_stream(config.seed, Stream::Eval);
        let eval = (0..config.eval_batch)
            .map(|_| {
                let sample = dataset.sample(&mut rng);
                let t = rng.uniform();
                Example::build(sample.image, sample.cond, t, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = net.params().len();
        let mut trainer = Self {
            dataset,
            net,
            velocity: vec![0.0; p],
            grad: vec![0.0; p],
            step: 0,
            trace: Vec::with_capacity(config.steps),
            data_rng: SeededRng::for_stream(config.seed, Stream::Data),
            time_rng: SeededRng::for_stream(config.seed, Stream::TrainTime),
            noise_rng: SeededRng::for_stream(config.seed, Stream::TrainNoise),
            eval,
            initial_loss: 0.0,
            config,
        };
        trainer.initial_loss = trainer.eval_loss();
        Ok(trainer)
    }

    /// Loss on the fixed held-out batch.
    pub fn eval_loss(&self) -> f64 {
        loss_and_grad::<f32>(&self.net, self.net.params(), &self.eval, None)
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps
    }

    pub fn trace(&self) -> &[f64] {
        &self.trace
    }

    pub fn net(&self) -> &ToyNet {
        &self.net
    }

    /// One optimizer update; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let cfg = &self.config;
        let divisible = self.dataset.h % cfg.lr_scale == 0 && self.dataset.w % cfg.lr_scale == 0;
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let down = (divisible && self.data_rng.uniform() < cfg.lr_fraction).then_some(cfg.lr_scale);
            let sample = self.dataset.sample(&mut self.data_rng);
            let x1 = match down {
                Some(s) => match cfg.lr_downscale {
                    Downscale::BlockMean => block_mean(&sample.image, s),
                    Downscale::Subsample => block_pick(&sample.image, s, &mut self.data_rng),
                },
                None => sample.image,
            };
            let t = self.time_rng.uniform();
            batch.push(Example::build(x1, sample.cond, t, &mut self.noise_rng)?);
        }
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let loss = loss_and_grad::<f32>(&self.net, self.net.params(), &batch, Some(&mut self.grad));
        let norm = self.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(Error::Training { step: self.step, loss });
        }
        let clip = if norm > cfg.clip_norm { cfg.clip_norm / norm } else { 1.0 } as f32;
        let lr = cfg.lr_at(self.step) as f32;
        let mu = cfg.momentum as f32;
        for ((p, v), &g) in self.net.params_mut().iter_mut().zip(&mut self.velocity).zip(&self.grad) {
            *v = mu * *v + clip * g;
            *p -= lr * *v;
        }
        if self.net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { step: self.step, loss });
        }
        self.trace.push(loss);
        self.step += 1;
        Ok(loss)
    }

    pub fn finish(self) -> (ToyNet, TrainReport) {
        let final_loss = self.eval_loss();
        let report = TrainReport {
            steps: self.step,
            trace: self.trace,
            initial_loss: self.initial_loss,
            final_loss,
        };
        (self.net, report)
    }
}

/// Trains a fresh network for `config.steps` updates.
pub fn train_toy(dataset: &ToyDataset, arch: Architecture, config: TrainConfig) -> Result<(ToyNet, TrainReport)> {
    let mut trainer = Trainer::new(dataset, arch, config)?;
    while !trainer.is_done() {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

/// Largest relative error between backprop gradients and central finite
/// differences (step 1e-3, in `f64`) over `probes` random parameters.
pub fn grad_check(field: &Field, probes: usize, seed: u64) -> Result<f64> {
    let net = field
        .as_toy_net()
        .ok_or_else(|| Error::Contract(format!("{} field has no trainable parameters", field.kind())))?;
    let arch = net.architecture();
    let mut rng = SeededRng::for_stream(seed, Stream::Probe);
    let batch: Vec<Example> = (0..2)
        .map(|_| {
            let (h, w) = (5, 6);
            let x1 = gaussian_noise(h, w, arch.channels, &mut rng)?;
            let t = rng.uniform();
            let cond = (0..arch.cond_arity).map(|_| rng.uniform() as f32).collect();
            Example::build(x1, cond, t, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut params = net.params_as::<f64>();
    let mut grad = vec![0.0f64; params.len()];
    loss_and_grad(net, &params, &batch, Some(&mut grad));
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let i = rng.below(params.len());
        let orig = params[i];
        params[i] = orig + eps;
        let up = loss_and_grad::<f64>(net, &params, &batch, None);
        params[i] = orig - eps;
        let down = loss_and_grad::<f64>(net, &params, &batch, None);
        params[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        worst = worst.max((grad[i] - fd).abs() / (fd.abs() + 1e-8));
    }
    Ok(worst)
}
