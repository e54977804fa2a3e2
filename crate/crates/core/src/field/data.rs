//! Synthetic "blob" images: a few soft-edged colored discs on a dark
//! background, with a condition vector summarizing the blobs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyDataset {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub min_blobs: usize,
    pub max_blobs: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Width in pixels of the linear ramp at each disc's rim.
    pub edge: f64,
    pub background: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub image: LatentGrid,
    pub cond: Vec<f32>,
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    cy: f64,
    cx: f64,
    r: f64,
}

impl Default for ToyDataset {
    fn default() -> Self {
        Self {
            h: 16,
            w: 16,
            d: 3,
            min_blobs: 1,
            max_blobs: 3,
            min_radius: 2.0,
            max_radius: 4.5,
            edge: 1.0,
            background: 0.1,
        }
    }
}

impl ToyDataset {
    pub fn validate(&self) -> Result<()> {
        if self.h == 0 || self.w == 0 || self.d == 0 {
            return Err(Error::Dimension(format!("{}x{}x{}", self.h, self.w, self.d)));
        }
        if self.min_blobs == 0 || self.min_blobs > self.max_blobs {
            return Err(Error::Config("need 1 <= min_blobs <= max_blobs".into()));
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return Err(Error::Config("need 0 < min_radius <= max_radius".into()));
        }
        if !(self.edge > 0.0 && self.edge.is_finite()) {
            return Err(Error::Config("edge width must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::Config("background must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Condition length: blob-count fraction plus mean blob color per channel.
    pub fn cond_arity(&self) -> usize {
        1 + self.d
    }

    pub fn sample(&self, rng: &mut SeededRng) -> ToySample {
        let count = self.min_blobs + rng.below(self.max_blobs - self.min_blobs + 1);
        let mut blobs = Vec::with_capacity(count);
        let mut colors = Vec::with_capacity(count * self.d);
        for _ in 0..count {
            blobs.push(Blob {
                cy: rng.uniform_range(0.0, self.h as f64),
                cx: rng.uniform_range(0.0, self.w as f64),
                r: rng.uniform_range(self.min_radius, self.max_radius),
            });
            for _ in 0..self.d {
                colors.push(rng.uniform_range(0.3, 1.0) as f32);
            }
        }
        let mut data = vec![self.background; self.h * self.w * self.d];
        for (b, color) in blobs.iter().zip(colors.chunks_exact(self.d)) {
            for y in 0..self.h {
                for x in 0..self.w {
                    let dist = ((y as f64 + 0.5 - b.cy).powi(2) + (x as f64 + 0.5 - b.cx).powi(2)).sqrt();
                    let a = ((b.r - dist) / self.edge + 0.5).clamp(0.0, 1.0) as f32;
                    if a == 0.0 {
                        continue;
                    }
                    let px = &mut data[(y * self.w + x) * self.d..(y * self.w + x + 1) * self.d];
                    for (p, &c) in px.iter_mut().zip(color) {
                        *p = (1.0 - a) * *p + a * c;
                    }
                }
            }
        }
        let mut cond = Vec::with_capacity(self.cond_arity());
        cond.push(count as f32 / self.max_blobs as f32);
        for c in 0..self.d {
            let sum: f32 = colors.chunks_exact(self.d).map(|col| col[c]).sum();
            cond.push(sum / count as f32);
        }
        ToySample {
            image: LatentGrid::from_raw(self.h, self.w, self.d, 1.0, data),
            cond,
        }
    }

    /// A condition vector drawn from the same distribution as training.
    pub fn sample_condition(&self, rng: &mut SeededRng) -> Vec<f32> {
        self.sample(rng).cond
    }
}

/// Block-average downscale by an integer factor (image resized for
/// multi-scale training).
pub(crate) fn block_mean(x: &LatentGrid, s: usize) -> LatentGrid {
    let (h, w, d) = (x.h() / s, x.w() / s, x.d());
    let inv = 1.0 / (s * s) as f32;
    let mut out = vec![0.0f32; h * w * d];
    for y in 0..h * s {
        for xx in 0..w * s {
            let o = ((y / s) * w + xx / s) * d;
            for c in 0..d {
                out[o + c] += x.get(y, xx, c);
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    LatentGrid::from_raw(h, w, d, x.t(), out)
}

/// One uniformly drawn pixel from each `s x s` block.
pub(crate) fn block_pick(x: &LatentGrid, s: usize, rng: &mut SeededRng) -> LatentGrid {
    let (h, w, d) = (x.h() / s, x.w() / s, x.d());
    let mut out = Vec::with_capacity(h * w * d);
    for by in 0..h {
        for bx in 0..w {
            let k = rng.below(s * s);
            let (y, xx) = (by * s + k / s, bx * s + k % s);
            out.extend((0..d).map(|c| x.get(y, xx, c)));
        }
    }
    LatentGrid::from_raw(h, w, d, x.t(), out)
}
