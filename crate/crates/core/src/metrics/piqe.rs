//! Blind block-based quality score over mean-subtracted contrast-normalized
//! (MSCN) coefficients. Lower is better; an image with no spatially active
//! block scores exactly 1.
//!
//! Pipeline: gray image on `[0, 255]` -> MSCN with a 7x7 Gaussian window ->
//! non-overlapping blocks -> active blocks (MSCN variance above threshold)
//! are tested for flat edge segments (structural distortion) and for a
//! center/surround noise signature -> `(sum D + 1) / (active + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Constants of the score; recorded alongside every reported value since
/// scores are only comparable under identical parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiqeParams {
    pub block: usize,
    pub window: usize,
    pub sigma: f64,
    /// MSCN stabilizer.
    pub c: f64,
    /// MSCN variance above which a block is spatially active.
    pub activity: f64,
    /// Edge segment length and the standard deviation below which a segment
    /// counts as flat.
    pub segment: usize,
    pub segment_std: f64,
    pub c1: f64,
}

impl Default for PiqeParams {
    fn default() -> Self {
        Self {
            block: 8,
            window: 7,
            sigma: 7.0 / 6.0,
            c: 1.0,
            activity: 0.1,
            segment: 6,
            segment_std: 0.1,
            c1: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiqeScore {
    pub score: f64,
    pub active_blocks: usize,
    pub structural_blocks: usize,
    pub noise_blocks: usize,
    pub params: PiqeParams,
}

fn gray(img: &LatentGrid) -> Result<Vec<f64>> {
    let to255 = |v: f32| v.clamp(0.0, 1.0) as f64 * 255.0;
    match img.d() {
        1 => Ok(img.data().iter().map(|&v| to255(v)).collect()),
        3 => Ok(img
            .data()
            .chunks_exact(3)
            .map(|p| 0.299 * to255(p[0]) + 0.587 * to255(p[1]) + 0.114 * to255(p[2]))
            .collect()),
        d => Err(Error::Contract(format!("quality score needs 1 or 3 channels, got {d}"))),
    }
}

/// Mirror index including the edge sample (`-1 -> 0`, `n -> n - 1`).
fn symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let j = i.rem_euclid(period);
    (if j < n { j } else { period - 1 - j }) as usize
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - r;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filtering with symmetric borders.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * img[y * w + symmetric(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, &kv)| kv * tmp[symmetric(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

pub(crate) fn mscn(img: &[f64], h: usize, w: usize, p: &PiqeParams) -> Vec<f64> {
    let k = gaussian_kernel(p.window, p.sigma);
    let mu = filter(img, h, w, &k);
    let sq: Vec<f64> = img.iter().map(|v| v * v).collect();
    let mu2 = filter(&sq, h, w, &k);
    img.iter()
        .zip(mu.iter().zip(&mu2))
        .map(|(&v, (&m, &m2))| (v - m) / ((m2 - m * m).abs().sqrt() + p.c))
        .collect()
}

fn std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Whether any length-`segment` run along the block's four edges is flat.
fn has_flat_edge(block: &[f64], n: usize, p: &PiqeParams) -> bool {
    let edges: [Vec<f64>; 4] = [
        (0..n).map(|i| block[i]).collect(),
        (0..n).map(|i| block[(n - 1) * n + i]).collect(),
        (0..n).map(|i| block[i * n]).collect(),
        (0..n).map(|i| block[i * n + n - 1]).collect(),
    ];
    let seg = p.segment.min(n);
    edges
        .iter()
        .any(|e| e.windows(seg).any(|s| std(s) < p.segment_std))
}

/// Center (middle half) versus surround standard deviation test.
fn is_noisy(block: &[f64], n: usize, sigma_blk: f64) -> bool {
    let lo = n / 4;
    let hi = n - n / 4;
    let mut center = Vec::new();
    let mut surround = Vec::new();
    for y in 0..n {
        for x in 0..n {
            let v = block[y * n + x];
            if (lo..hi).contains(&y) && (lo..hi).contains(&x) {
                center.push(v);
            } else {
                surround.push(v);
            }
        }
    }
    let (sc, ss) = (std(&center), std(&surround));
    let denom = sc.max(ss);
    let beta = if denom > 0.0 { (sc - ss).abs() / denom } else { 0.0 };
    sigma_blk > 2.0 * beta
}

pub fn piqe(img: &LatentGrid, params: PiqeParams) -> Result<PiqeScore> {
    let n = params.block;
    if n < 2 || img.h() < n || img.w() < n {
        return Err(Error::Dimension(format!(
            "{}x{} image smaller than one {n}x{n} block",
            img.h(),
            img.w()
        )));
    }
    let (h, w) = (img.h(), img.w());
    let coeffs = mscn(&gray(img)?, h, w, &params);
    let mut total = 0.0;
    let (mut active, mut structural, mut noisy) = (0, 0, 0);
    let mut block = vec![0.0; n * n];
    for by in 0..h / n {
        for bx in 0..w / n {
            for y in 0..n {
                let row = (by * n + y) * w + bx * n;
                block[y * n..(y + 1) * n].copy_from_slice(&coeffs[row..row + n]);
            }
            let sd = std(&block);
            let var = sd * sd;
            if var <= params.activity {
                continue;
            }
            active += 1;
            if has_flat_edge(&block, n, &params) {
                structural += 1;
                total += (1.0 - var).max(0.0) / params.activity;
            }
            if is_noisy(&block, n, sd) {
                noisy += 1;
                total += var / params.activity;
            }
        }
    }
    Ok(PiqeScore {
        score: (total + params.c1) / (active as f64 + params.c1),
        active_blocks: active,
        structural_blocks: structural,
        noise_blocks: noisy,
        params,
    })
}
