//! Image and trajectory metrics.

mod piqe;

pub use piqe::{piqe, PiqeParams, PiqeScore};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Reported when the inputs are identical.
pub const PSNR_CAP: f64 = 99.0;

/// `10 log10(i_max^2 / MSE)`, capped at [`PSNR_CAP`] for zero error.
pub fn psnr(a: &LatentGrid, b: &LatentGrid, i_max: f64) -> Result<f64> {
    a.same_shape(b)?;
    if !(i_max > 0.0) {
        return Err(Error::Contract(format!("peak value {i_max} must be positive")));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let e = p as f64 - q as f64;
            e * e
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok(10.0 * (i_max * i_max / mse).log10())
}

/// Mean over non-overlapping `s x s` blocks.
pub fn area_resize(x: &LatentGrid, s: usize) -> Result<LatentGrid> {
    if s == 0 || x.h() % s != 0 || x.w() % s != 0 {
        return Err(Error::Divisibility { h: x.h(), w: x.w(), scale: s });
    }
    Ok(crate::field::block_mean(x, s))
}

/// Clamps every entry to `[0, 1]` (the displayable range).
pub fn clamp_unit(x: &LatentGrid) -> LatentGrid {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    y
}

/// Cosine similarity of the flattened grids, clamped to `[-1, 1]`; zero
/// when either grid is zero.
pub fn cosine_similarity(a: &LatentGrid, b: &LatentGrid) -> Result<f64> {
    a.same_shape(b)?;
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        let (p, q) = (p as f64, q as f64);
        ab += p * q;
        aa += p * p;
        bb += q * q;
    }
    if aa == 0.0 || bb == 0.0 {
        return Ok(0.0);
    }
    Ok((ab / (aa * bb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosinePoint {
    pub k: usize,
    pub mean: f64,
    pub std: f64,
}

/// For `k = 0..=span`, mean and population standard deviation over runs of
/// `cos(v_D, v_{D+k})`, each run given as its velocity sequence.
pub fn cosine_trace(runs: &[&[LatentGrid]], d: usize, span: usize) -> Result<Vec<CosinePoint>> {
    if runs.is_empty() {
        return Err(Error::Contract("cosine trace needs at least one run".into()));
    }
    if let Some(r) = runs.iter().find(|r| d + span >= r.len()) {
        return Err(Error::Contract(format!(
            "step {} beyond trajectory of {} velocities",
            d + span,
            r.len()
        )));
    }
    (0..=span)
        .map(|k| {
            let sims = runs
                .iter()
                .map(|r| cosine_similarity(&r[d], &r[d + k]))
                .collect::<Result<Vec<_>>>()?;
            let n = sims.len() as f64;
            let mean = sims.iter().sum::<f64>() / n;
            let var = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            Ok(CosinePoint { k, mean, std: var.sqrt() })
        })
        .collect()
}
