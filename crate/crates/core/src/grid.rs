//! Latent grids, timestep schedules and seeded noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// An `h x w x d` grid of `f32` values stored row-major as `(y, x, c)`,
/// tagged with the flow time `t` it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGrid {
    h: usize,
    w: usize,
    d: usize,
    t: f64,
    data: Vec<f32>,
}

/// `(h, w, d)` triple.
pub type Shape = (usize, usize, usize);

fn check_dims(h: usize, w: usize, d: usize) -> Result<()> {
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Dimension(format!("{h}x{w}x{d}: every dimension must be >= 1")));
    }
    Ok(())
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("time {t} outside [0, 1]")));
    }
    Ok(())
}

impl LatentGrid {
    pub fn zeros(h: usize, w: usize, d: usize) -> Result<Self> {
        Self::filled(h, w, d, 0.0)
    }

    pub fn filled(h: usize, w: usize, d: usize, value: f32) -> Result<Self> {
        check_dims(h, w, d)?;
        Ok(Self {
            h,
            w,
            d,
            t: 0.0,
            data: vec![value; h * w * d],
        })
    }

    pub fn from_vec(h: usize, w: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(h, w, d)?;
        if data.len() != h * w * d {
            return Err(Error::shape(h * w * d, data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite entry at flat index {i}")));
        }
        Ok(Self { h, w, d, t: 0.0, data })
    }

    /// Builds a grid from a function of `(y, x, c)`.
    pub fn from_fn(h: usize, w: usize, d: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(h, w, d)?;
        let mut data = Vec::with_capacity(h * w * d);
        for y in 0..h {
            for x in 0..w {
                for c in 0..d {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::from_vec(h, w, d, data)
    }

    /// Wraps data produced internally; finiteness is checked where the
    /// sampler needs it rather than on every intermediate.
    pub(crate) fn from_raw(h: usize, w: usize, d: usize, t: f64, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), h * w * d);
        Self { h, w, d, t, data }
    }

    pub fn with_time(mut self, t: f64) -> Result<Self> {
        check_time(t)?;
        self.t = t;
        Ok(self)
    }

    pub(crate) fn set_time(&mut self, t: f64) {
        self.t = t.clamp(0.0, 1.0);
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn shape(&self) -> Shape {
        (self.h, self.w, self.d)
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.w + x) * self.d + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let i = self.index(y, x, c);
        self.data[i] = v;
    }

    /// Channel vector at pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.index(y, x, 0);
        &self.data[i..i + self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(fmt_shape(self.shape()), fmt_shape(other.shape())));
        }
        Ok(())
    }

    /// `self - other`, keeping `self.t`.
    pub fn sub(&self, other: &LatentGrid) -> Result<LatentGrid> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_raw(self.h, self.w, self.d, self.t, data))
    }

    /// `self + scale * other`, keeping `self.t`.
    pub fn axpy(&self, scale: f32, other: &LatentGrid) -> Result<LatentGrid> {
        self.same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + scale * b)
            .collect();
        Ok(Self::from_raw(self.h, self.w, self.d, self.t, data))
    }

    pub fn scaled(&self, scale: f32) -> LatentGrid {
        let data = self.data.iter().map(|v| v * scale).collect();
        Self::from_raw(self.h, self.w, self.d, self.t, data)
    }

    /// Euclidean norm over all entries, accumulated in `f64`.
    pub fn l2_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f32> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

pub(crate) fn fmt_shape((h, w, d): Shape) -> String {
    format!("{h}x{w}x{d}")
}

/// Strictly increasing times `t_0 = 0 < ... < t_N = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimestepSchedule {
    ts: Vec<f64>,
}

impl TimestepSchedule {
    pub fn new(ts: Vec<f64>) -> Result<Self> {
        if ts.len() < 2 {
            return Err(Error::Config("schedule needs at least two times".into()));
        }
        if ts[0] != 0.0 || *ts.last().unwrap() != 1.0 {
            return Err(Error::Config("schedule must start at 0 and end at 1".into()));
        }
        if ts.windows(2).any(|p| !(p[1] > p[0])) {
            return Err(Error::Config("schedule must be strictly increasing".into()));
        }
        Ok(Self { ts })
    }

    /// Uniform schedule `t_i = i / N`.
    pub fn linear(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs N >= 1".into()));
        }
        let n = steps as f64;
        let ts = (0..=steps).map(|i| i as f64 / n).collect();
        Self::new(ts)
    }

    /// Number of integration steps `N`.
    pub fn steps(&self) -> usize {
        self.ts.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.ts
    }

    pub fn t(&self, i: usize) -> f64 {
        self.ts[i]
    }

    /// `t_{i+1} - t_i`.
    pub fn delta(&self, i: usize) -> f64 {
        self.ts[i + 1] - self.ts[i]
    }
}

impl TryFrom<Vec<f64>> for TimestepSchedule {
    type Error = Error;

    fn try_from(ts: Vec<f64>) -> Result<Self> {
        Self::new(ts)
    }
}

impl From<TimestepSchedule> for Vec<f64> {
    fn from(s: TimestepSchedule) -> Self {
        s.ts
    }
}

/// i.i.d. standard normal grid at `t = 0`, drawn in row-major order.
pub fn gaussian_noise(h: usize, w: usize, d: usize, rng: &mut SeededRng) -> Result<LatentGrid> {
    check_dims(h, w, d)?;
    let data = (0..h * w * d).map(|_| rng.normal()).collect();
    Ok(LatentGrid::from_raw(h, w, d, 0.0, data))
}
