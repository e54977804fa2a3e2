//! Row-selection operators: every output position copies exactly one input
//! position. Covers the strided downsampling candidates, the nearest
//! (top-left) baseline, cyclic translation and arbitrary warps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;
use crate::rng::{SeededRng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    Downsample,
    NearestDown,
    Translate,
    Warp,
}

/// How per-block offsets are drawn when building a candidate family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyMode {
    /// An independent permutation of the `s^2` offsets in every block.
    #[default]
    PerBlock,
    /// One permutation shared by all blocks.
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOperator {
    pub kind: OperatorKind,
    /// Downsampling factor; 1 for same-size operators.
    pub s: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    /// Flat input index `y * in_w + x` for each output, row-major.
    pub sources: Vec<usize>,
    /// Groups of outputs `(y, x)` that share a source; the first member is
    /// the canonical one. Only warps have entries.
    pub duplicates: Vec<Vec<(usize, usize)>>,
    /// RNG stream the operator was drawn from, if any.
    pub stream: Option<u64>,
}

fn check_divisible(h: usize, w: usize, s: usize) -> Result<()> {
    if s < 1 || h % s != 0 || w % s != 0 || h == 0 || w == 0 {
        return Err(Error::Divisibility { h, w, scale: s });
    }
    Ok(())
}

impl SelectionOperator {
    fn blockwise(kind: OperatorKind, h: usize, w: usize, s: usize, offset: impl Fn(usize, usize) -> usize) -> Self {
        let (oh, ow) = (h / s, w / s);
        let mut sources = Vec::with_capacity(oh * ow);
        for i in 0..oh {
            for j in 0..ow {
                let p = offset(i, j);
                sources.push((i * s + p / s) * w + j * s + p % s);
            }
        }
        Self {
            kind,
            s,
            in_h: h,
            in_w: w,
            out_h: oh,
            out_w: ow,
            sources,
            duplicates: Vec::new(),
            stream: None,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate feeding output `(y, x)`.
    pub fn source(&self, y: usize, x: usize) -> (usize, usize) {
        let f = self.sources[y * self.out_w + x];
        (f / self.in_w, f % self.in_w)
    }

    /// Number of outputs that copy an already-used source.
    pub fn duplication_count(&self) -> usize {
        self.duplicates.iter().map(|g| g.len() - 1).sum()
    }

    pub fn needs_decorrelation(&self) -> bool {
        !self.duplicates.is_empty()
    }

    /// Gathers `x` through the operator; channels and time carry over.
    pub fn apply(&self, x: &LatentGrid) -> Result<LatentGrid> {
        if x.h() != self.in_h || x.w() != self.in_w {
            return Err(Error::shape(
                format!("{}x{} input", self.in_h, self.in_w),
                format!("{}x{}", x.h(), x.w()),
            ));
        }
        let d = x.d();
        let src = x.data();
        let mut out = Vec::with_capacity(self.out_len() * d);
        for &f in &self.sources {
            out.extend_from_slice(&src[f * d..(f + 1) * d]);
        }
        Ok(LatentGrid::from_raw(self.out_h, self.out_w, d, x.t(), out))
    }

    /// Operator equal to applying `self` and then `next`.
    pub fn then(&self, next: &SelectionOperator) -> Result<SelectionOperator> {
        if next.in_h != self.out_h || next.in_w != self.out_w {
            return Err(Error::shape(
                format!("{}x{} input", next.in_h, next.in_w),
                format!("{}x{}", self.out_h, self.out_w),
            ));
        }
        let sources = next.sources.iter().map(|&f| self.sources[f]).collect();
        Ok(Self {
            kind: self.kind,
            s: self.s * next.s,
            in_h: self.in_h,
            in_w: self.in_w,
            out_h: next.out_h,
            out_w: next.out_w,
            sources,
            duplicates: Vec::new(),
            stream: None,
        })
    }

    /// Explicit `(out_len) x (in_h * in_w)` 0/1 matrix, row-major. For tests.
    pub fn dense_matrix(&self) -> Vec<f32> {
        let cols = self.in_h * self.in_w;
        let mut m = vec![0.0f32; self.out_len() * cols];
        for (r, &f) in self.sources.iter().enumerate() {
            m[r * cols + f] = 1.0;
        }
        m
    }
}

/// The `s^2` mutually exclusive downsampling candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorFamily {
    pub s: usize,
    pub mode: FamilyMode,
    /// One permutation of `0..s^2` per block (row-major), or a single one in
    /// shared mode. Offset `p` is position `(p / s, p % s)` in the block.
    pub permutations: Vec<Vec<usize>>,
    pub candidates: Vec<SelectionOperator>,
}

impl OperatorFamily {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Draws a candidate family from `rng`.
pub fn build_family(h: usize, w: usize, s: usize, mode: FamilyMode, rng: &mut SeededRng) -> Result<OperatorFamily> {
    if s < 2 {
        return Err(Error::Config(format!("scale {s} must be >= 2")));
    }
    check_divisible(h, w, s)?;
    let blocks = match mode {
        FamilyMode::PerBlock => (h / s) * (w / s),
        FamilyMode::Shared => 1,
    };
    let perms = (0..blocks).map(|_| rng.permutation(s * s)).collect();
    let mut fam = from_permutations(h, w, s, mode, perms)?;
    for c in &mut fam.candidates {
        c.stream = Some(rng.stream());
    }
    Ok(fam)
}

/// Builds a family from explicit permutations (one per block, or one for
/// shared mode).
pub fn from_permutations(h: usize, w: usize, s: usize, mode: FamilyMode, permutations: Vec<Vec<usize>>) -> Result<OperatorFamily> {
    check_divisible(h, w, s)?;
    let ow = w / s;
    let blocks = match mode {
        FamilyMode::PerBlock => (h / s) * ow,
        FamilyMode::Shared => 1,
    };
    if permutations.len() != blocks {
        return Err(Error::shape(format!("{blocks} permutations"), permutations.len()));
    }
    for p in &permutations {
        let mut q = p.clone();
        q.sort_unstable();
        if q != (0..s * s).collect::<Vec<_>>() {
            return Err(Error::Config(format!("{p:?} is not a permutation of 0..{}", s * s)));
        }
    }
    let perm = |i: usize, j: usize| match mode {
        FamilyMode::PerBlock => &permutations[i * ow + j],
        FamilyMode::Shared => &permutations[0],
    };
    let candidates = (0..s * s)
        .map(|k| SelectionOperator::blockwise(OperatorKind::Downsample, h, w, s, |i, j| perm(i, j)[k]))
        .collect();
    Ok(OperatorFamily {
        s,
        mode,
        permutations,
        candidates,
    })
}

/// Block top-left sampling.
pub fn nearest_operator(h: usize, w: usize, s: usize) -> Result<SelectionOperator> {
    check_divisible(h, w, s)?;
    Ok(SelectionOperator::blockwise(OperatorKind::NearestDown, h, w, s, |_, _| 0))
}

/// Cyclic shift: output `(y, x)` reads input `(y - dy, x - dx)` modulo the
/// grid size.
pub fn translate_operator(h: usize, w: usize, dy: i64, dx: i64) -> Result<SelectionOperator> {
    check_divisible(h, w, 1)?;
    let mut sources = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let sy = (y as i64 - dy).rem_euclid(h as i64) as usize;
            let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
            sources.push(sy * w + sx);
        }
    }
    Ok(SelectionOperator {
        kind: OperatorKind::Translate,
        s: 1,
        in_h: h,
        in_w: w,
        out_h: h,
        out_w: w,
        sources,
        duplicates: Vec::new(),
        stream: None,
    })
}

/// Same-size warp from an explicit source map (row-major over outputs).
pub fn warp_operator(h: usize, w: usize, map: &[(usize, usize)]) -> Result<SelectionOperator> {
    check_divisible(h, w, 1)?;
    if map.len() != h * w {
        return Err(Error::shape(h * w, map.len()));
    }
    let mut sources = Vec::with_capacity(h * w);
    let mut users: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (o, &(sy, sx)) in map.iter().enumerate() {
        if sy >= h || sx >= w {
            return Err(Error::OutOfBounds { y: sy, x: sx, h, w });
        }
        let f = sy * w + sx;
        sources.push(f);
        users.entry(f).or_default().push((o / w, o % w));
    }
    let duplicates = users.into_values().filter(|g| g.len() > 1).collect();
    Ok(SelectionOperator {
        kind: OperatorKind::Warp,
        s: 1,
        in_h: h,
        in_w: w,
        out_h: h,
        out_w: w,
        sources,
        duplicates,
        stream: None,
    })
}

/// Draws a family from the candidate stream of `seed`.
pub fn family_for_seed(h: usize, w: usize, s: usize, mode: FamilyMode, seed: u64) -> Result<OperatorFamily> {
    build_family(h, w, s, mode, &mut SeededRng::for_stream(seed, Stream::Candidates))
}
