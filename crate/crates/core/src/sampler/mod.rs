//! Euler integration of the flow ODE, preview sampling with operator
//! selection and guidance, baselines, and manipulated sampling.

mod config;
mod cost;

pub use config::PreviewConfig;
pub use cost::{full_cost, preview_cost, CostModel, EvalLedger};

use serde::{Deserialize, Serialize};

use crate::commutator::{commutator, commutator_norm, select_with};
use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::grid::{LatentGrid, TimestepSchedule};
use crate::guidance::{guidance_step, guidance_target, GuidanceState};
use crate::operator::{build_family, nearest_operator, OperatorKind, SelectionOperator};
use crate::rng::{SeededRng, Stream};

/// A named RNG stream consumed by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamUse {
    pub name: String,
    pub id: u64,
}

impl From<Stream> for StreamUse {
    fn from(s: Stream) -> Self {
        Self {
            name: s.name().into(),
            id: s.id(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    pub streams: Vec<StreamUse>,
    /// `(h, w, d)` of the final grid.
    pub shape: [usize; 3],
    pub selected: Option<usize>,
    pub operator: Option<OperatorKind>,
    pub candidate_norms: Vec<f64>,
    /// Commutator norm of the chosen operator at `t_D`.
    pub norm_t_d: Option<f64>,
    /// `|D* v(x^full_{D+m}) - v(x^low_{D+m})|` before guidance at step
    /// `D + m`, from the paired full-resolution run.
    pub norm_t_dm: Option<f64>,
    /// Same, with the stored velocity in place of the paired one.
    pub norm_t_dm_stored: Option<f64>,
    /// Guided steps actually taken (`m + 1` when guidance is on).
    pub guided_steps: usize,
    /// `m`, the count named by the window length parameter.
    pub guided_steps_nominal: usize,
    pub hr_evals: usize,
    pub lr_evals: usize,
    pub cost_model: CostModel,
    pub cost_units: f64,
    /// Cost of full-resolution sampling with the configured `N`.
    pub reference_cost: f64,
    pub speedup: f64,
    /// `|x_1^low - D* x_1^full|` and the same divided by `|x_1^full|`.
    pub compliance: Option<f64>,
    pub compliance_relative: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl RunReport {
    fn new(method: &str, seed: u64, model: CostModel, steps: usize) -> Self {
        Self {
            method: method.into(),
            seed,
            streams: Vec::new(),
            shape: [0; 3],
            selected: None,
            operator: None,
            candidate_norms: Vec::new(),
            norm_t_d: None,
            norm_t_dm: None,
            norm_t_dm_stored: None,
            guided_steps: 0,
            guided_steps_nominal: 0,
            hr_evals: 0,
            lr_evals: 0,
            cost_model: model,
            cost_units: 0.0,
            reference_cost: full_cost(steps),
            speedup: 0.0,
            compliance: None,
            compliance_relative: None,
            wall_ms: None,
        }
    }

    fn close(&mut self, ledger: &EvalLedger, grid: &LatentGrid) {
        self.hr_evals = ledger.hr_evals;
        self.lr_evals = ledger.lr_evals;
        self.cost_units = ledger.units;
        self.speedup = self.reference_cost / ledger.units;
        self.shape = [grid.h(), grid.w(), grid.d()];
    }
}

/// States `x_0..x_N` and velocities `v(x_i, t_i)` for `i < N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<LatentGrid>,
    pub velocities: Vec<LatentGrid>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub report: RunReport,
    pub grid: LatentGrid,
    pub trajectory: Option<Trajectory>,
    /// Manipulated runs: the latent right after the operator (and any
    /// decorrelation) was applied.
    pub manipulated: Option<LatentGrid>,
}

fn euler(x: &LatentGrid, v: &LatentGrid, sched: &TimestepSchedule, i: usize) -> Result<LatentGrid> {
    let mut next = x.axpy(sched.delta(i) as f32, v)?;
    if !next.is_finite() {
        return Err(Error::Integration { step: i });
    }
    next.set_time(sched.t(i + 1));
    Ok(next)
}

fn check_noise(x0: &LatentGrid) -> Result<()> {
    if x0.t() != 0.0 {
        return Err(Error::Contract(format!("initial latent must be at t = 0, got {}", x0.t())));
    }
    Ok(())
}

fn integrate(
    field: &(impl VelocityField + ?Sized),
    sched: &TimestepSchedule,
    x0: &LatentGrid,
    cond: &[f32],
    ledger: &mut EvalLedger,
) -> Result<(LatentGrid, Trajectory)> {
    let mut states = Vec::with_capacity(sched.steps() + 1);
    let mut velocities = Vec::with_capacity(sched.steps());
    let mut x = x0.clone();
    for i in 0..sched.steps() {
        let v = field.eval(&x, sched.t(i), cond)?;
        ledger.charge(x.pixels(), 1);
        let next = euler(&x, &v, sched, i)?;
        states.push(x);
        velocities.push(v);
        x = next;
    }
    states.push(x.clone());
    Ok((x, Trajectory { states, velocities }))
}

/// Full-resolution Euler sampling with trajectory retained.
pub fn sample_hr(field: &(impl VelocityField + ?Sized), cfg: &PreviewConfig, x0: &LatentGrid) -> Result<Run> {
    check_noise(x0)?;
    let sched = cfg.schedule()?;
    let mut ledger = EvalLedger::new(cfg.cost_model, x0.pixels());
    let (grid, traj) = integrate(field, &sched, x0, &cfg.condition, &mut ledger)?;
    let mut report = RunReport::new("full", cfg.seed, cfg.cost_model, cfg.steps);
    report.streams.push(Stream::Noise.into());
    report.close(&ledger, &grid);
    Ok(Run {
        report,
        grid,
        trajectory: Some(traj),
        manipulated: None,
    })
}

fn check_paired<'a>(paired: &'a Run, x0: &LatentGrid, steps: usize) -> Result<&'a Trajectory> {
    let traj = paired
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Contract("paired run kept no trajectory".into()))?;
    if traj.velocities.len() != steps || traj.states[0] != *x0 {
        return Err(Error::Contract("paired run does not share noise and schedule".into()));
    }
    Ok(traj)
}

/// Preview sampling: full-resolution steps before `D`, operator selection
/// and downsampling at `D`, guided reduced steps `D..=D+m`, plain reduced
/// steps afterwards. `paired` (the full-resolution run from the same noise)
/// enables the `t_{D+m}` norm and compliance measurements.
pub fn sample_preview(
    field: &(impl VelocityField + ?Sized),
    cfg: &PreviewConfig,
    x0: &LatentGrid,
    paired: Option<&Run>,
) -> Result<Run> {
    check_noise(x0)?;
    cfg.validate(x0.h(), x0.w())?;
    let sched = cfg.schedule()?;
    let paired_traj = paired.map(|p| check_paired(p, x0, cfg.steps)).transpose()?;
    let cond = cfg.condition.as_slice();
    let (n, d_step, s) = (cfg.steps, cfg.downsample_step, cfg.scale);
    let mut ledger = EvalLedger::new(cfg.cost_model, x0.pixels());
    let method = match (cfg.strategy.name(), cfg.guidance) {
        (name, true) => format!("preview-{name}"),
        (name, false) => format!("preview-{name}-nocg"),
    };
    let mut report = RunReport::new(&method, cfg.seed, cfg.cost_model, n);
    report.streams.push(Stream::Noise.into());

    let mut x = x0.clone();
    for i in 0..d_step {
        let v = field.eval(&x, sched.t(i), cond)?;
        ledger.charge(x.pixels(), 1);
        x = euler(&x, &v, &sched, i)?;
    }

    let t_d = sched.t(d_step);
    let v_hr = if cfg.stores_velocity() {
        ledger.charge(x.pixels(), 1);
        Some(field.eval(&x, t_d, cond)?)
    } else {
        None
    };
    let mut cand_rng = SeededRng::for_stream(cfg.seed, Stream::Candidates);
    let mut sel_rng = SeededRng::for_stream(cfg.seed, Stream::Selection);
    let family = build_family(x.h(), x.w(), s, cfg.family_mode, &mut cand_rng)?;
    report.streams.push(Stream::Candidates.into());
    if cfg.strategy == crate::commutator::Strategy::Random {
        report.streams.push(Stream::Selection.into());
    }
    let sel = select_with(cfg.strategy, field, &family, &x, t_d, cond, v_hr.as_ref(), Some(&mut sel_rng))?;
    ledger.charge(x.pixels() / (s * s), sel.lr_evals);
    let op = sel.operator;
    report.selected = sel.index;
    report.operator = Some(op.kind);
    report.norm_t_d = Some(match sel.index {
        Some(i) if !sel.norms.is_empty() => sel.norms[i],
        // measurement only, not charged
        _ => commutator(field, &op, &x, t_d, cond, v_hr.as_ref())?.norm,
    });
    report.candidate_norms = sel.norms;

    let stored = match (&v_hr, paired_traj) {
        (Some(v), _) => Some(guidance_target(&op, v)?),
        (None, Some(tr)) => Some(guidance_target(&op, &tr.velocities[d_step])?),
        (None, None) => None,
    };
    let guide = if cfg.guidance {
        let target = stored.clone().expect("stored velocity exists when guidance is on");
        Some(GuidanceState::new(target, &sched, d_step, cfg.m, cfg.alpha, cfg.k)?.with_sign(cfg.guidance_sign))
    } else {
        None
    };
    report.guided_steps_nominal = cfg.m;

    let mut x = op.apply(&x)?;
    for i in d_step..n {
        let t = sched.t(i);
        if i == d_step + cfg.m {
            let v_lr = field.eval(&x, t, cond)?;
            if let Some(tr) = paired_traj {
                report.norm_t_dm = Some(commutator_norm(&op.apply(&tr.velocities[i])?.sub(&v_lr)?));
            }
            if let Some(g) = &stored {
                report.norm_t_dm_stored = Some(commutator_norm(&g.sub(&v_lr)?));
            }
        }
        if let Some(g) = guide.as_ref().filter(|g| g.covers(i)) {
            let (next, used) = guidance_step(&x, g, field, t, cond)?;
            ledger.charge(x.pixels(), used);
            report.guided_steps += 1;
            x = next;
        }
        let v = field.eval(&x, t, cond)?;
        ledger.charge(x.pixels(), 1);
        x = euler(&x, &v, &sched, i)?;
    }

    if let Some(p) = paired {
        let reference = op.apply(&p.grid)?;
        let dev = x.sub(&reference)?.l2_norm();
        report.compliance = Some(dev);
        report.compliance_relative = Some(dev / p.grid.l2_norm().max(f64::MIN_POSITIVE));
    }
    report.close(&ledger, &x);
    Ok(Run {
        report,
        grid: x,
        trajectory: None,
        manipulated: None,
    })
}

/// Comparison baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaselineKind {
    /// Full resolution with fewer steps `N' < N`.
    ReducedNfe { steps: usize },
    /// Reduced resolution from the start, same `N`, noise strided from the
    /// full-resolution noise.
    DirectLr,
    /// Nearest downsampling at `D`, no selection and no guidance.
    NaiveDown,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::ReducedNfe { .. } => "reduced-nfe",
            BaselineKind::DirectLr => "direct-lr",
            BaselineKind::NaiveDown => "naive-down",
        }
    }
}

pub fn sample_baseline(
    kind: BaselineKind,
    field: &(impl VelocityField + ?Sized),
    cfg: &PreviewConfig,
    x0: &LatentGrid,
    paired: Option<&Run>,
) -> Result<Run> {
    check_noise(x0)?;
    let mut run = match kind {
        BaselineKind::ReducedNfe { steps } => {
            if steps == 0 || steps >= cfg.steps {
                return Err(Error::Config(format!("reduced-NFE needs 0 < N' < {}, got {steps}", cfg.steps)));
            }
            let reduced = PreviewConfig {
                steps,
                schedule: None,
                ..cfg.clone()
            };
            let mut run = sample_hr(field, &reduced, x0)?;
            run.report.reference_cost = full_cost(cfg.steps);
            run.report.speedup = run.report.reference_cost / run.report.cost_units;
            run.trajectory = None;
            run
        }
        BaselineKind::DirectLr => {
            cfg.validate(x0.h(), x0.w())?;
            let sched = cfg.schedule()?;
            let x0_lr = nearest_operator(x0.h(), x0.w(), cfg.scale)?.apply(x0)?;
            let mut ledger = EvalLedger::new(cfg.cost_model, x0.pixels());
            let (grid, _) = integrate(field, &sched, &x0_lr, &cfg.condition, &mut ledger)?;
            let mut report = RunReport::new("", cfg.seed, cfg.cost_model, cfg.steps);
            report.streams.push(Stream::Noise.into());
            report.operator = Some(OperatorKind::NearestDown);
            report.close(&ledger, &grid);
            Run {
                report,
                grid,
                trajectory: None,
                manipulated: None,
            }
        }
        BaselineKind::NaiveDown => {
            let naive = PreviewConfig {
                strategy: crate::commutator::Strategy::Nearest,
                guidance: false,
                ..cfg.clone()
            };
            sample_preview(field, &naive, x0, paired)?
        }
    };
    run.report.method = kind.name().into();
    Ok(run)
}

/// Duplicated outputs other than the canonical one get fresh noise around
/// the source's predicted endpoint: `t (x_src + (1 - t) v_src) + (1 - t) e`.
fn decorrelate(
    op: &SelectionOperator,
    before: &LatentGrid,
    v: &LatentGrid,
    after: &mut LatentGrid,
    t: f64,
    rng: &mut SeededRng,
) {
    let (tf, rf) = (t as f32, (1.0 - t) as f32);
    for group in &op.duplicates {
        for &(y, x) in &group[1..] {
            let (sy, sx) = op.source(y, x);
            for c in 0..after.d() {
                let endpoint = before.get(sy, sx, c) + rf * v.get(sy, sx, c);
                after.set(y, x, c, tf * endpoint + rf * rng.normal());
            }
        }
    }
}

/// Like [`sample_preview`], but at step `t_m` a same-size operator
/// (translation or warp) replaces the downsampling. Guidance targets the
/// transformed stored velocity. Warps with duplicated sources get fresh
/// noise on the duplicates when `decorrelation` is set.
pub fn sample_manipulated(
    field: &(impl VelocityField + ?Sized),
    cfg: &PreviewConfig,
    op: &SelectionOperator,
    t_m: usize,
    x0: &LatentGrid,
    decorrelation: bool,
) -> Result<Run> {
    check_noise(x0)?;
    if op.in_h != x0.h() || op.in_w != x0.w() || op.out_h != op.in_h || op.out_w != op.in_w {
        return Err(Error::Contract("manipulation must be a same-size operator on the grid".into()));
    }
    let sched = cfg.schedule()?;
    let n = cfg.steps;
    if !(0 < t_m && t_m < n) || (cfg.guidance && t_m + cfg.m + 1 > n) {
        return Err(Error::Config(format!("manipulation step {t_m} invalid for N = {n}, m = {}", cfg.m)));
    }
    let cond = cfg.condition.as_slice();
    let mut ledger = EvalLedger::new(cfg.cost_model, x0.pixels());
    let mut report = RunReport::new("manipulated", cfg.seed, cfg.cost_model, n);
    report.streams.push(Stream::Noise.into());
    report.operator = Some(op.kind);

    let mut x = x0.clone();
    for i in 0..t_m {
        let v = field.eval(&x, sched.t(i), cond)?;
        ledger.charge(x.pixels(), 1);
        x = euler(&x, &v, &sched, i)?;
    }
    let t = sched.t(t_m);
    let needs_v = cfg.guidance || (decorrelation && op.needs_decorrelation());
    let v_stored = if needs_v {
        ledger.charge(x.pixels(), 1);
        Some(field.eval(&x, t, cond)?)
    } else {
        None
    };
    let mut moved = op.apply(&x)?;
    if decorrelation && op.needs_decorrelation() {
        let v = v_stored.as_ref().expect("velocity stored for decorrelation");
        decorrelate(op, &x, v, &mut moved, t, &mut SeededRng::for_stream(cfg.seed, Stream::Warp));
        report.streams.push(Stream::Warp.into());
    }
    let guide = match (&v_stored, cfg.guidance) {
        (Some(v), true) => Some(
            GuidanceState::new(guidance_target(op, v)?, &sched, t_m, cfg.m, cfg.alpha, cfg.k)?.with_sign(cfg.guidance_sign),
        ),
        _ => None,
    };
    report.guided_steps_nominal = if cfg.guidance { cfg.m } else { 0 };
    let manipulated = moved.clone();
    let mut x = moved;
    for i in t_m..n {
        let t = sched.t(i);
        if let Some(g) = guide.as_ref().filter(|g| g.covers(i)) {
            let (next, used) = guidance_step(&x, g, field, t, cond)?;
            ledger.charge(x.pixels(), used);
            report.guided_steps += 1;
            x = next;
        }
        let v = field.eval(&x, t, cond)?;
        ledger.charge(x.pixels(), 1);
        x = euler(&x, &v, &sched, i)?;
    }
    report.close(&ledger, &x);
    Ok(Run {
        report,
        grid: x,
        trajectory: None,
        manipulated: Some(manipulated),
    })
}

/// Pooled Pearson correlation, across samples, between each duplicated
/// output and the canonical output of its group.
pub fn duplicate_correlation(op: &SelectionOperator, samples: &[LatentGrid]) -> Result<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for g in samples {
        for group in &op.duplicates {
            let (cy, cx) = group[0];
            for &(y, x) in &group[1..] {
                for c in 0..g.d() {
                    a.push(g.get(cy, cx, c) as f64);
                    b.push(g.get(y, x, c) as f64);
                }
            }
        }
    }
    if a.len() < 2 {
        return Err(Error::Degenerate("no duplicated outputs to correlate".into()));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (p, q) in a.iter().zip(&b) {
        sab += (p - ma) * (q - mb);
        saa += (p - ma) * (p - ma);
        sbb += (q - mb) * (q - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance in duplicated outputs".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}
