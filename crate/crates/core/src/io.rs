//! Grid persistence: raw little-endian `f32` tensors with a JSON sidecar,
//! and 8-bit image export.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub t: f64,
}

/// Sidecar path for a tensor file: `name.f32` -> `name.f32.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_grid(grid: &LatentGrid) -> Vec<u8> {
    grid.data().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_grid(header: GridHeader, bytes: &[u8]) -> Result<LatentGrid> {
    let expected = header.h * header.w * header.d * 4;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "tensor payload has {} bytes, header implies {expected}",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    LatentGrid::from_vec(header.h, header.w, header.d, data)?.with_time(header.t)
}

/// Writes `path` (raw payload) and `path.json` (header).
pub fn write_grid(path: &Path, grid: &LatentGrid) -> Result<()> {
    let header = GridHeader {
        h: grid.h(),
        w: grid.w(),
        d: grid.d(),
        t: grid.t(),
    };
    write_atomic(path, &encode_grid(grid))?;
    write_atomic(&sidecar_path(path), serde_json::to_string_pretty(&header)?.as_bytes())
}

pub fn read_grid(path: &Path) -> Result<LatentGrid> {
    let header: GridHeader = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    decode_grid(header, &fs::read(path)?)
}

/// Write to a temporary sibling, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Maps a value to 8 bits: clamp to `[0, 1]`, scale to 255, round half
/// away from zero.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_bytes(grid: &LatentGrid) -> Result<(Vec<u8>, png::ColorType)> {
    let color = match grid.d() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        d => return Err(Error::Contract(format!("image export needs 1 or 3 channels, got {d}"))),
    };
    Ok((grid.data().iter().map(|&v| to_u8(v)).collect(), color))
}

pub fn write_png(path: &Path, grid: &LatentGrid) -> Result<()> {
    let (bytes, color) = image_bytes(grid)?;
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, grid.w() as u32, grid.h() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Format(format!("png header: {e}")))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::Format(format!("png data: {e}")))?;
    }
    write_atomic(path, &buf)
}

/// Binary PPM (`P6`) or PGM (`P5`) fallback.
pub fn write_ppm(path: &Path, grid: &LatentGrid) -> Result<()> {
    let (bytes, color) = image_bytes(grid)?;
    let magic = if color == png::ColorType::Rgb { "P6" } else { "P5" };
    let mut out = BufWriter::new(Vec::new());
    write!(out, "{magic}\n{} {}\n255\n", grid.w(), grid.h())?;
    out.write_all(&bytes)?;
    let buf = out.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &buf)
}
