//! `[D, v](x) = D v(x) - v(D x)`, its spatially averaged norm, and choice of
//! the downsampling candidate with the smallest commutator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::grid::LatentGrid;
use crate::operator::{nearest_operator, OperatorFamily, SelectionOperator};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct CommutatorReport {
    pub grid: LatentGrid,
    pub norm: f64,
    pub candidate: Option<usize>,
    pub hr_reused: bool,
}

/// Mean over positions of the Euclidean norm across channels.
pub fn commutator_norm(grid: &LatentGrid) -> f64 {
    let sum: f64 = grid
        .data()
        .chunks_exact(grid.d())
        .map(|px| px.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .sum();
    sum / grid.pixels() as f64
}

/// Root mean square over all entries (sensitivity check only).
pub fn commutator_rms(grid: &LatentGrid) -> f64 {
    let ss: f64 = grid.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
    (ss / grid.len() as f64).sqrt()
}

/// Evaluates the commutator; reuses `v_hr` (the field at `x`) when given.
pub fn commutator(
    field: &(impl VelocityField + ?Sized),
    op: &SelectionOperator,
    x: &LatentGrid,
    t: f64,
    cond: &[f32],
    v_hr: Option<&LatentGrid>,
) -> Result<CommutatorReport> {
    let computed;
    let v = match v_hr {
        Some(v) => {
            x.same_shape(v)?;
            v
        }
        None => {
            computed = field.eval(x, t, cond)?;
            &computed
        }
    };
    let lhs = op.apply(v)?;
    let rhs = field.eval(&op.apply(x)?, t, cond)?;
    let grid = lhs.sub(&rhs)?;
    Ok(CommutatorReport {
        norm: commutator_norm(&grid),
        grid,
        candidate: None,
        hr_reused: v_hr.is_some(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Smallest commutator norm.
    #[default]
    Argmin,
    /// Largest commutator norm (ablation).
    Argmax,
    /// Uniformly random candidate; norms are not evaluated.
    Random,
    /// Block top-left sampling; no candidates evaluated.
    Nearest,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Nearest, Strategy::Random, Strategy::Argmax, Strategy::Argmin];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Argmin => "argmin",
            Strategy::Argmax => "argmax",
            Strategy::Random => "random",
            Strategy::Nearest => "nearest",
        }
    }

    /// Whether the strategy needs the candidate norms (and hence `v_hr`).
    pub fn uses_norms(self) -> bool {
        matches!(self, Strategy::Argmin | Strategy::Argmax)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub operator: SelectionOperator,
    /// Index into the family, `None` for the nearest operator.
    pub index: Option<usize>,
    /// Norm of every candidate; empty when the strategy does not look.
    pub norms: Vec<f64>,
    /// Reduced-resolution evaluations spent.
    pub lr_evals: usize,
}

/// First index of the minimum (ties go to the lowest index).
pub fn argmin(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v >= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

fn candidate_norms(
    field: &(impl VelocityField + ?Sized),
    family: &OperatorFamily,
    x: &LatentGrid,
    t: f64,
    cond: &[f32],
    v_hr: &LatentGrid,
) -> Result<Vec<f64>> {
    family
        .candidates
        .iter()
        .map(|op| commutator(field, op, x, t, cond, Some(v_hr)).map(|r| r.norm))
        .collect()
}

/// Candidate with the smallest commutator norm, reusing `v_hr = v(x)` for
/// every candidate: `s^2` reduced-resolution evaluations, no full ones.
pub fn select_operator(
    field: &(impl VelocityField + ?Sized),
    family: &OperatorFamily,
    x: &LatentGrid,
    t: f64,
    cond: &[f32],
    v_hr: &LatentGrid,
) -> Result<Selection> {
    select_with(Strategy::Argmin, field, family, x, t, cond, Some(v_hr), None)
}

/// Selection under any [`Strategy`]. `v_hr` is required by the norm-based
/// strategies and `rng` by [`Strategy::Random`].
#[allow(clippy::too_many_arguments)]
pub fn select_with(
    strategy: Strategy,
    field: &(impl VelocityField + ?Sized),
    family: &OperatorFamily,
    x: &LatentGrid,
    t: f64,
    cond: &[f32],
    v_hr: Option<&LatentGrid>,
    rng: Option<&mut SeededRng>,
) -> Result<Selection> {
    if family.is_empty() {
        return Err(Error::Contract("empty operator family".into()));
    }
    match strategy {
        Strategy::Argmin | Strategy::Argmax => {
            let v_hr = v_hr.ok_or_else(|| Error::Contract("norm-based selection needs the stored velocity".into()))?;
            let norms = candidate_norms(field, family, x, t, cond, v_hr)?;
            let pick = if strategy == Strategy::Argmin { argmin(&norms) } else { argmax(&norms) };
            let i = pick.ok_or_else(|| Error::Degenerate("no finite candidate norm".into()))?;
            Ok(Selection {
                operator: family.candidates[i].clone(),
                index: Some(i),
                lr_evals: norms.len(),
                norms,
            })
        }
        Strategy::Random => {
            let rng = rng.ok_or_else(|| Error::Contract("random selection needs an rng".into()))?;
            let i = rng.below(family.len());
            Ok(Selection {
                operator: family.candidates[i].clone(),
                index: Some(i),
                norms: Vec::new(),
                lr_evals: 0,
            })
        }
        Strategy::Nearest => {
            let op = &family.candidates[0];
            Ok(Selection {
                operator: nearest_operator(op.in_h, op.in_w, family.s)?,
                index: None,
                norms: Vec::new(),
                lr_evals: 0,
            })
        }
    }
}
