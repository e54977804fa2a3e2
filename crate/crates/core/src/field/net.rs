//! Small convolutional velocity network with hand-written backprop.
//!
//! Per-pixel input features are the latent channels, two time-modulated
//! copies of them (`x t`, `x t^2`), normalized pixel coordinates, a time
//! embedding, and the condition vector broadcast to every pixel. The
//! coordinate channels make the network position-dependent, so it does not
//! commute with subsampling.
//!
//! Output = conv stack (SiLU between layers) + optional 1x1 linear skip from
//! the input features.

use std::f64::consts::PI;
use std::ops::{AddAssign, MulAssign};

use serde::{Deserialize, Serialize};

use super::{check_eval_args, VelocityField};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::{SeededRng, Stream};

pub(crate) const TIME_FEATURES: usize = 4;
const MAX_PARAMS: usize = 500_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Latent channels `d`.
    pub channels: usize,
    pub cond_arity: usize,
    /// Widths of the hidden convolution layers; empty means a single
    /// linear convolution.
    pub hidden: Vec<usize>,
    /// Odd kernel size shared by all convolutions.
    pub kernel: usize,
    pub coord_channels: bool,
    pub modulated_input: bool,
    pub skip: bool,
}

impl Architecture {
    /// The configuration used by the experiments: two hidden layers of 24.
    pub fn toy(channels: usize, cond_arity: usize) -> Self {
        Self {
            channels,
            cond_arity,
            hidden: vec![24, 24],
            kernel: 3,
            coord_channels: true,
            modulated_input: true,
            skip: true,
        }
    }

    /// One convolution from features to output, no activation, no skip.
    pub fn linear(channels: usize, cond_arity: usize) -> Self {
        Self {
            channels,
            cond_arity,
            hidden: Vec::new(),
            kernel: 3,
            coord_channels: true,
            modulated_input: true,
            skip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Config("architecture needs at least one channel".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let n = self.param_count();
        if n > MAX_PARAMS {
            return Err(Error::Config(format!("{n} parameters exceeds the {MAX_PARAMS} limit")));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        let x = if self.modulated_input { 3 } else { 1 } * self.channels;
        let coords = if self.coord_channels { 2 } else { 0 };
        x + coords + TIME_FEATURES + self.cond_arity
    }

    /// `(fan_in, fan_out)` of each convolution.
    fn conv_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut cin = self.feature_count();
        for &h in &self.hidden {
            dims.push((cin, h));
            cin = h;
        }
        dims.push((cin, self.channels));
        dims
    }

    pub fn param_count(&self) -> usize {
        let kk = self.kernel * self.kernel;
        let conv: usize = self.conv_dims().iter().map(|&(i, o)| kk * i * o + o).sum();
        let skip = if self.skip { self.feature_count() * self.channels } else { 0 };
        conv + skip
    }
}

/// Floating-point element the network can run in.
pub(crate) trait Real:
    Copy + Default + PartialOrd + AddAssign + MulAssign + Send + Sync + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;

    /// `C <- alpha A B + beta C` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows > 0 && cols > 0 {
        let last = (rows - 1) as isize * rs + (cols - 1) as isize * cs;
        assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                // SAFETY: every operand extent was bounds-checked above and
                // `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

fn sigmoid<T: Real>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

/// Per-pixel feature matrix `(h*w) x feature_count`.
pub(crate) fn features<T: Real>(arch: &Architecture, x: &[T], h: usize, w: usize, t: f64, cond: &[f32]) -> Vec<T> {
    let d = arch.channels;
    let nf = arch.feature_count();
    let time = [t, t * t, (PI * t).sin(), (PI * t).cos()].map(T::from_f64);
    let (t1, t2) = (T::from_f64(t), T::from_f64(t * t));
    let cond: Vec<T> = cond.iter().map(|&c| T::from_f64(c as f64)).collect();
    let mut f = Vec::with_capacity(h * w * nf);
    for y in 0..h {
        let cy = T::from_f64(2.0 * (y as f64 + 0.5) / h as f64 - 1.0);
        for xx in 0..w {
            let px = &x[(y * w + xx) * d..(y * w + xx + 1) * d];
            f.extend_from_slice(px);
            if arch.modulated_input {
                f.extend(px.iter().map(|&v| v * t1));
                f.extend(px.iter().map(|&v| v * t2));
            }
            if arch.coord_channels {
                f.push(cy);
                f.push(T::from_f64(2.0 * (xx as f64 + 0.5) / w as f64 - 1.0));
            }
            f.extend_from_slice(&time);
            f.extend_from_slice(&cond);
        }
    }
    f
}

/// Zero-padded patch matrix `(h*w) x (k*k*cin)`, patch order `(ky, kx, c)`.
fn im2col<T: Real>(input: &[T], h: usize, w: usize, cin: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let row = k * k * cin;
    let mut col = vec![T::ZERO; h * w * row];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut col[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..k {
                let sy = y as isize + ky as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = x as isize + kx as isize - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = (sy as usize * w + sx as usize) * cin;
                    let off = (ky * k + kx) * cin;
                    dst[off..off + cin].copy_from_slice(&input[src..src + cin]);
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back to the input.
fn col2im<T: Real>(col: &[T], h: usize, w: usize, cin: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let row = k * k * cin;
    let mut out = vec![T::ZERO; h * w * cin];
    for y in 0..h {
        for x in 0..w {
            let src = &col[(y * w + x) * row..(y * w + x + 1) * row];
            for ky in 0..k {
                let sy = y as isize + ky as isize - r;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let sx = x as isize + kx as isize - r;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let dst = (sy as usize * w + sx as usize) * cin;
                    let off = (ky * k + kx) * cin;
                    for c in 0..cin {
                        out[dst + c] += src[off + c];
                    }
                }
            }
        }
    }
    out
}

/// Offsets of each layer's weights and bias inside the flat parameter vector.
#[derive(Debug, Clone)]
struct Layout {
    convs: Vec<ConvSlot>,
    skip: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    cin: usize,
    cout: usize,
    weight: usize,
    bias: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let kk = arch.kernel * arch.kernel;
        let mut off = 0;
        let convs = arch
            .conv_dims()
            .into_iter()
            .map(|(cin, cout)| {
                let slot = ConvSlot {
                    cin,
                    cout,
                    weight: off,
                    bias: off + kk * cin * cout,
                };
                off = slot.bias + cout;
                slot
            })
            .collect();
        let skip = arch.skip.then_some(off);
        Self { convs, skip }
    }
}

/// Activations retained for the backward pass.
pub(crate) struct Tape<T> {
    feats: Vec<T>,
    cols: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    pub out: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct ToyNet {
    arch: Architecture,
    params: Vec<f32>,
    layout_cache: LayoutCache,
}

#[derive(Debug, Clone)]
struct LayoutCache(Layout);

impl PartialEq for ToyNet {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.params == other.params
    }
}

impl ToyNet {
    /// LeCun-uniform initialization from the `Init` stream of `seed`; the
    /// skip path starts at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0f32; arch.param_count()];
        let mut rng = SeededRng::for_stream(seed, Stream::Init);
        let kk = arch.kernel * arch.kernel;
        let last = layout.convs.len() - 1;
        for (i, slot) in layout.convs.iter().enumerate() {
            let fan_in = (kk * slot.cin) as f64;
            let gain = if i == last { 0.5 } else { 1.0 };
            let bound = gain * (3.0 / fan_in).sqrt();
            for p in &mut params[slot.weight..slot.bias] {
                *p = rng.uniform_range(-bound, bound) as f32;
            }
        }
        Ok(Self {
            arch,
            params,
            layout_cache: LayoutCache(layout),
        })
    }

    pub fn from_params(arch: Architecture, params: Vec<f32>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Format(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite weight".into()));
        }
        let layout = Layout::new(&arch);
        Ok(Self {
            arch,
            params,
            layout_cache: LayoutCache(layout),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn layout(&self) -> &Layout {
        &self.layout_cache.0
    }

    /// Forward pass over `x` (row-major `h x w x d`), keeping activations.
    pub(crate) fn forward<T: Real>(&self, params: &[T], x: &[T], h: usize, w: usize, t: f64, cond: &[f32]) -> Tape<T> {
        let arch = &self.arch;
        let k = arch.kernel;
        let hw = h * w;
        let feats = features(arch, x, h, w, t, cond);
        let layout = self.layout();
        let last = layout.convs.len() - 1;
        let mut cols = Vec::with_capacity(layout.convs.len());
        let mut pre = Vec::with_capacity(layout.convs.len());
        let mut act: Option<Vec<T>> = None;
        let mut out = Vec::new();
        for (i, slot) in layout.convs.iter().enumerate() {
            let input = act.as_deref().unwrap_or(&feats);
            let col = im2col(input, h, w, slot.cin, k);
            let kdim = k * k * slot.cin;
            let bias = &params[slot.bias..slot.bias + slot.cout];
            let mut z: Vec<T> = (0..hw).flat_map(|_| bias.iter().copied()).collect();
            T::gemm(
                hw,
                kdim,
                slot.cout,
                &col,
                kdim as isize,
                1,
                &params[slot.weight..slot.bias],
                slot.cout as isize,
                1,
                T::ONE,
                &mut z,
                slot.cout as isize,
                1,
            );
            cols.push(col);
            if i == last {
                out = z;
            } else {
                act = Some(z.iter().map(|&v| v * sigmoid(v)).collect());
                pre.push(z);
            }
        }
        if let Some(off) = layout.skip {
            let nf = arch.feature_count();
            let d = arch.channels;
            T::gemm(
                hw,
                nf,
                d,
                &feats,
                nf as isize,
                1,
                &params[off..off + nf * d],
                d as isize,
                1,
                T::ONE,
                &mut out,
                d as isize,
                1,
            );
        }
        Tape { feats, cols, pre, out }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d out`.
    pub(crate) fn backward<T: Real>(&self, params: &[T], tape: &Tape<T>, dout: &[T], h: usize, w: usize, grad: &mut [T]) {
        let arch = &self.arch;
        let k = arch.kernel;
        let hw = h * w;
        let layout = self.layout();
        if let Some(off) = layout.skip {
            let nf = arch.feature_count();
            let d = arch.channels;
            // dW_skip += feats^T dout
            T::gemm(
                nf,
                hw,
                d,
                &tape.feats,
                1,
                nf as isize,
                dout,
                d as isize,
                1,
                T::ONE,
                &mut grad[off..off + nf * d],
                d as isize,
                1,
            );
        }
        let mut dz: Vec<T> = dout.to_vec();
        for (i, slot) in layout.convs.iter().enumerate().rev() {
            let kdim = k * k * slot.cin;
            let col = &tape.cols[i];
            T::gemm(
                kdim,
                hw,
                slot.cout,
                col,
                1,
                kdim as isize,
                &dz,
                slot.cout as isize,
                1,
                T::ONE,
                &mut grad[slot.weight..slot.bias],
                slot.cout as isize,
                1,
            );
            let gb = &mut grad[slot.bias..slot.bias + slot.cout];
            for row in dz.chunks_exact(slot.cout) {
                for (g, &v) in gb.iter_mut().zip(row) {
                    *g += v;
                }
            }
            if i == 0 {
                break;
            }
            // dcol = dz W^T, then fold back onto the previous activation.
            let mut dcol = vec![T::ZERO; hw * kdim];
            T::gemm(
                hw,
                slot.cout,
                kdim,
                &dz,
                slot.cout as isize,
                1,
                &params[slot.weight..slot.bias],
                1,
                slot.cout as isize,
                T::ZERO,
                &mut dcol,
                kdim as isize,
                1,
            );
            let da = col2im(&dcol, h, w, slot.cin, k);
            let z = &tape.pre[i - 1];
            dz = da
                .iter()
                .zip(z)
                .map(|(&g, &v)| {
                    let s = sigmoid(v);
                    g * s * (T::ONE + v * (T::ONE - s))
                })
                .collect();
        }
    }

    pub(crate) fn params_as<T: Real>(&self) -> Vec<T> {
        self.params.iter().map(|&p| T::from_f64(p as f64)).collect()
    }
}

impl VelocityField for ToyNet {
    fn eval(&self, x: &LatentGrid, t: f64, cond: &[f32]) -> Result<LatentGrid> {
        check_eval_args(self, x, t, cond)?;
        let tape = self.forward::<f32>(&self.params, x.data(), x.h(), x.w(), t, cond);
        Ok(LatentGrid::from_raw(x.h(), x.w(), x.d(), t, tape.out))
    }

    fn cond_arity(&self) -> usize {
        self.arch.cond_arity
    }

    fn channels(&self) -> Option<usize> {
        Some(self.arch.channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_architecture_is_desk_scale() {
        let a = Architecture::toy(3, 4);
        a.validate().unwrap();
        assert!(a.param_count() <= MAX_PARAMS);
        let huge = Architecture {
            hidden: vec![512, 512],
            ..a.clone()
        };
        assert!(huge.validate().is_err());
        let even = Architecture { kernel: 2, ..a };
        assert!(even.validate().is_err());
    }

    #[test]
    fn eval_on_zero_grid_is_finite_and_shaped() {
        let net = ToyNet::init(Architecture::toy(3, 4), 1).unwrap();
        let x = LatentGrid::zeros(6, 5, 3).unwrap();
        let v = net.eval(&x, 0.4, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(v.shape(), (6, 5, 3));
        assert!(v.is_finite());
        assert!(net.eval(&x, 0.4, &[0.1]).is_err());
        assert!(net.eval(&LatentGrid::zeros(6, 5, 2).unwrap(), 0.4, &[0.0; 4]).is_err());
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let net = ToyNet::init(Architecture::toy(3, 4), 9).unwrap();
        let mut r = SeededRng::new(2, 1);
        let x = LatentGrid::from_fn(8, 8, 3, |_, _, _| r.normal()).unwrap();
        let a = net.eval(&x, 0.3, &[0.0; 4]).unwrap();
        let b = net.eval(&x, 0.3, &[0.0; 4]).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn conv_matches_direct_loop() {
        // single linear conv without extras: compare against a direct
        // zero-padded convolution over the feature map
        let arch = Architecture {
            channels: 2,
            cond_arity: 0,
            hidden: vec![],
            kernel: 3,
            coord_channels: false,
            modulated_input: false,
            skip: false,
        };
        let net = ToyNet::init(arch.clone(), 4).unwrap();
        let (h, w) = (4, 5);
        let mut r = SeededRng::new(8, 1);
        let x: Vec<f64> = (0..h * w * 2).map(|_| r.normal() as f64).collect();
        let p = net.params_as::<f64>();
        let got = net.forward::<f64>(&p, &x, h, w, 0.25, &[]).out;
        let f = features(&arch, &x, h, w, 0.25, &[]);
        let nf = arch.feature_count();
        let bias = 9 * nf * 2;
        for y in 0..h {
            for xx in 0..w {
                for o in 0..2 {
                    let mut acc = p[bias + o];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky - 1, xx as isize + kx - 1);
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for c in 0..nf {
                                let wi = ((ky as usize * 3 + kx as usize) * nf + c) * 2 + o;
                                acc += p[wi] * f[(sy as usize * w + sx as usize) * nf + c];
                            }
                        }
                    }
                    let g = got[(y * w + xx) * 2 + o];
                    assert!((g - acc).abs() < 1e-12, "({y},{xx},{o}): {g} vs {acc}");
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(a), b> == <a, col2im(b)>
        let (h, w, c, k) = (3, 4, 2, 3);
        let mut r = SeededRng::new(1, 5);
        let a: Vec<f64> = (0..h * w * c).map(|_| r.normal() as f64).collect();
        let b: Vec<f64> = (0..h * w * k * k * c).map(|_| r.normal() as f64).collect();
        let lhs: f64 = im2col(&a, h, w, c, k).iter().zip(&b).map(|(p, q)| p * q).sum();
        let rhs: f64 = a.iter().zip(col2im(&b, h, w, c, k)).map(|(p, q)| p * q).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
