//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Statistical criteria train the toy network once.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use previewflow::experiment::{compare_seed, seed_noise, ConditionSource, Method, MethodScore};
use previewflow::field::{train_toy, Architecture, ToyDataset, ToyNet, TrainConfig};
use previewflow::metrics::{cosine_trace, piqe, psnr, PiqeParams, PSNR_CAP};
use previewflow::operator::{build_family, family_for_seed, nearest_operator, FamilyMode};
use previewflow::sampler::{full_cost, preview_cost};
use previewflow::stats::{pairs, wilcoxon_exact, wilcoxon_signed_rank, Alternative, PairedSample};
use previewflow::study::cg_effect_study;
use previewflow::{
    guidance_step, sample_hr, sample_preview, BaselineKind, Field, GuidanceSign, GuidanceState, LatentGrid, PreviewConfig, SeededRng,
    Strategy, TimestepSchedule, VelocityField,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn random_grid(h: usize, w: usize, d: usize, rng: &mut SeededRng) -> LatentGrid {
    LatentGrid::from_fn(h, w, d, |_, _, _| rng.normal()).unwrap()
}

fn rel_l2(a: &LatentGrid, b: &LatentGrid) -> f64 {
    let diff = a.sub(b).unwrap().l2_norm();
    let scale = b.l2_norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn within_time(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

// ---------------------------------------------------------------------------
// 1. operator algebra

fn operator_algebra() -> Outcome {
    let start = Instant::now();
    let mut families = 0usize;
    let mut worst = 0f32;
    for s in [2usize, 3, 4] {
        for h in (s..=16).step_by(s) {
            for w in (s..=16).step_by(s) {
                for mode in [FamilyMode::PerBlock, FamilyMode::Shared] {
                    for seed in 0..3u64 {
                        let fam = build_family(h, w, s, mode, &mut SeededRng::new(seed, 900)).unwrap();
                        families += 1;
                        if fam.candidates.len() != s * s {
                            return outcome(false, format!("{h}x{w} s={s}: {} candidates", fam.candidates.len()));
                        }
                        let (oh, ow, cols) = (h / s, w / s, h * w);
                        // dense oracle straight from the block permutations
                        let perm = |i: usize, j: usize| match mode {
                            FamilyMode::PerBlock => &fam.permutations[i * ow + j],
                            FamilyMode::Shared => &fam.permutations[0],
                        };
                        let oracle: Vec<Vec<f32>> = (0..s * s)
                            .map(|k| {
                                let mut m = vec![0f32; oh * ow * cols];
                                for i in 0..oh {
                                    for j in 0..ow {
                                        let p = perm(i, j)[k];
                                        let (y, x) = (i * s + p / s, j * s + p % s);
                                        m[(i * ow + j) * cols + y * w + x] = 1.0;
                                    }
                                }
                                m
                            })
                            .collect();
                        let x = random_grid(h, w, 2, &mut SeededRng::new(seed, 901));
                        for (k, c) in fam.candidates.iter().enumerate() {
                            if c.dense_matrix() != oracle[k] {
                                return outcome(false, format!("{h}x{w} s={s} {mode:?}: candidate {k} differs from oracle"));
                            }
                            let y = c.apply(&x).unwrap();
                            for r in 0..oh * ow {
                                for ch in 0..2 {
                                    let dot: f32 = (0..cols).map(|q| oracle[k][r * cols + q] * x.data()[q * 2 + ch]).sum();
                                    worst = worst.max((dot - y.data()[r * 2 + ch]).abs());
                                }
                            }
                        }
                        // pairwise disjointness: elementwise products vanish
                        for a in 0..s * s {
                            for b in a + 1..s * s {
                                if oracle[a].iter().zip(&oracle[b]).any(|(p, q)| p * q != 0.0) {
                                    return outcome(false, format!("{h}x{w} s={s}: candidates {a},{b} overlap"));
                                }
                            }
                        }
                        // per-block partition: the candidates cover each block once
                        for i in 0..oh {
                            for j in 0..ow {
                                let mut got: Vec<usize> = fam.candidates.iter().map(|c| c.sources[i * ow + j]).collect();
                                got.sort_unstable();
                                let mut want: Vec<usize> =
                                    (0..s * s).map(|p| (i * s + p / s) * w + j * s + p % s).collect();
                                want.sort_unstable();
                                if got != want {
                                    return outcome(false, format!("{h}x{w} s={s}: block ({i},{j}) not partitioned"));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-6 && within_time(t, 5.0),
        format!("{families} families, max |apply - dense| {worst:.1e}, {:.2}s (limit 5s)", t.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// 2. exact-commutation compliance

fn selected_operator(cfg: &PreviewConfig, h: usize, w: usize, selected: Option<usize>) -> previewflow::SelectionOperator {
    match (cfg.strategy, selected) {
        (Strategy::Nearest, _) => nearest_operator(h, w, cfg.scale).unwrap(),
        (_, Some(i)) => family_for_seed(h, w, cfg.scale, cfg.family_mode, cfg.seed).unwrap().candidates[i].clone(),
        (s, None) => panic!("{s:?} run reports no selected candidate"),
    }
}

fn compliance() -> Outcome {
    use previewflow::field::ChannelAffine;
    let start = Instant::now();
    let mixing = ChannelAffine::new(
        vec![vec![-0.5, 0.3, 0.0], vec![0.2, -0.8, 0.1], vec![0.0, 0.4, -0.3]],
        vec![0.2, 0.1, 0.5],
    )
    .unwrap();
    let scalar = ChannelAffine::scalar(3, -0.7);
    let constant = ChannelAffine::constant(vec![0.3, -0.2, 0.1]);
    // A^2 = 0 and A b = 0: the velocity is constant along every path
    let nilpotent = ChannelAffine::new(
        vec![vec![0.0, 0.8, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0]],
        vec![0.3, 0.0, -0.4],
    )
    .unwrap();
    let mut worst_off = 0f64;
    let mut worst_on = 0f64;
    let mut mixing_on = 0f64;
    let mut runs = 0;
    for (h, s) in [(8usize, 2usize), (12, 3), (16, 4)] {
        for seed in 0..6u64 {
            let x0 = seed_noise(seed, h, h, 3).unwrap();
            for strategy in Strategy::ALL {
                for (guidance, fields) in [(false, vec![&mixing, &scalar, &constant, &nilpotent]), (true, vec![&constant, &nilpotent])] {
                    let cfg = PreviewConfig {
                        scale: s,
                        strategy,
                        guidance,
                        seed,
                        ..PreviewConfig::default()
                    };
                    for f in fields {
                        let hr = sample_hr(f, &cfg, &x0).unwrap();
                        let pv = sample_preview(f, &cfg, &x0, Some(&hr)).unwrap();
                        let op = selected_operator(&cfg, h, h, pv.report.selected);
                        let err = rel_l2(&pv.grid, &op.apply(&hr.grid).unwrap());
                        if guidance {
                            worst_on = worst_on.max(err);
                        } else {
                            worst_off = worst_off.max(err);
                        }
                        runs += 1;
                    }
                    if guidance {
                        let hr = sample_hr(&mixing, &cfg, &x0).unwrap();
                        let pv = sample_preview(&mixing, &cfg, &x0, Some(&hr)).unwrap();
                        let op = selected_operator(&cfg, h, h, pv.report.selected);
                        mixing_on = mixing_on.max(rel_l2(&pv.grid, &op.apply(&hr.grid).unwrap()));
                    }
                }
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst_off <= 1e-5 && worst_on <= 1e-5 && within_time(t, 10.0),
        format!(
            "{runs} runs; max relative |x_pv - D*x_hr|: guidance off {worst_off:.1e}, guidance on (path-constant v) {worst_on:.1e}; \
             mixing field with guidance (reported) {mixing_on:.1e}; {:.2}s (limit 10s)",
            t.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. guidance correctness

fn guidance() -> Outcome {
    use previewflow::field::{BoxBlur, ChannelAffine, Padding};
    let sched = TimestepSchedule::linear(30).unwrap();
    let t = sched.t(10);
    let mut rng = SeededRng::new(3, 902);
    // fixed point: target equal to the field's own velocity
    let mut fixed = 0f32;
    let blur = BoxBlur::new(0.7, Padding::Reflect);
    for _ in 0..20 {
        let x = random_grid(8, 8, 3, &mut rng).with_time(t).unwrap();
        let g = blur.eval(&x, t, &[]).unwrap();
        for k in [1, 3] {
            let st = GuidanceState::new(g.clone(), &sched, 10, 5, 0.5, k).unwrap();
            let (y, _) = guidance_step(&x, &st, &blur, t, &[]).unwrap();
            fixed = fixed.max(y.max_abs_diff(&x).unwrap());
        }
    }
    // v(x) = x: the residual g - v shrinks by exactly (1 - alpha)
    let identity = ChannelAffine::scalar(3, 1.0);
    let mut worst = 0f64;
    for alpha in [0.04, 0.5, 1.0] {
        for _ in 0..20 {
            let x = random_grid(8, 8, 3, &mut rng).with_time(t).unwrap();
            let g = random_grid(8, 8, 3, &mut rng).with_time(t).unwrap();
            let st = GuidanceState::new(g.clone(), &sched, 10, 5, alpha, 1).unwrap();
            let (y, evals) = guidance_step(&x, &st, &identity, t, &[]).unwrap();
            assert_eq!(evals, 1);
            let before = g.sub(&x).unwrap().l2_norm();
            let after = g.sub(&y).unwrap().l2_norm();
            worst = worst.max((after / before - (1.0 - alpha)).abs());
        }
    }
    outcome(
        fixed <= 1e-6 && worst <= 1e-6,
        format!("fixed-point max update {fixed:.1e}; max |contraction - (1 - alpha)| {worst:.1e} for alpha in {{0.04, 0.5, 1}}"),
    )
}

// ---------------------------------------------------------------------------
// 4. commutator norm under guidance

fn cg_effect(field: &Field, cond: &ConditionSource, shape: (usize, usize, usize)) -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..100).collect();
    let base = PreviewConfig::default();
    let r = cg_effect_study(field, &base, shape, cond, &seeds, jobs()).unwrap();
    let p = |metric, alt| r.test(metric, alt).unwrap().p;
    let (cg_less, cg_greater) = (p("commutator-cg", Alternative::Less), p("commutator-cg", Alternative::Greater));
    let (nocg_less, nocg_greater) = (p("commutator-nocg", Alternative::Less), p("commutator-nocg", Alternative::Greater));
    let mean = |f: fn(&previewflow::study::StudyRow) -> f64| r.rows.iter().map(f).sum::<f64>() / r.rows.len() as f64;
    let (n_d, n_cg, n_nocg) = (mean(|x| x.norm_t_d), mean(|x| x.norm_t_dm_cg), mean(|x| x.norm_t_dm_nocg));
    let pass = cg_less < 0.05 && (nocg_less >= 0.05 || nocg_greater < 0.05) && within_time(start.elapsed(), 900.0);

    // opposite guidance sign, reference only
    let minus = PreviewConfig {
        guidance_sign: GuidanceSign::Minus,
        alpha: 0.1,
        ..base
    };
    let rm = cg_effect_study(field, &minus, shape, cond, &seeds, jobs()).unwrap();
    let m_less = rm.test("commutator-cg", Alternative::Less).unwrap().p;
    let m_cg = rm.rows.iter().map(|x| x.norm_t_dm_cg).sum::<f64>() / rm.rows.len() as f64;
    outcome(
        pass,
        format!(
            "100 seeds; mean norm t_D {n_d:.4} -> t_D+m {n_cg:.4} with CG (p_decrease {cg_less:.2e}, p_increase {cg_greater:.2e}), \
             {n_nocg:.4} without (p_decrease {nocg_less:.2e}, p_increase {nocg_greater:.2e}); \
             reference, opposite sign alpha=0.1: t_D+m {m_cg:.4}, p_decrease {m_less:.2e}; {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------
// 5 and 6. selection ablation and baseline ordering share one sweep

struct Sweep {
    scores: BTreeMap<String, Vec<f64>>,
    elapsed: Duration,
    seeds: usize,
}

fn sweep(field: &Field, cond: &ConditionSource, shape: (usize, usize, usize)) -> Sweep {
    let start = Instant::now();
    let mut methods = vec![Method::OURS];
    for s in [Strategy::Nearest, Strategy::Random, Strategy::Argmax] {
        methods.push(Method::Preview { strategy: s, guidance: true });
    }
    methods.extend([
        Method::Baseline(BaselineKind::NaiveDown),
        Method::Baseline(BaselineKind::DirectLr),
        Method::Baseline(BaselineKind::ReducedNfe { steps: 20 }),
    ]);
    let seeds: Vec<u64> = (0..200).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs()).build().unwrap();
    let per_seed: Vec<Vec<MethodScore>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| compare_seed(field, &PreviewConfig::default(), shape, cond, s, &methods).unwrap().scores)
            .collect()
    });
    let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in per_seed.iter().flatten() {
        scores.entry(row.method.clone()).or_default().push(row.psnr);
    }
    Sweep {
        scores,
        elapsed: start.elapsed(),
        seeds: seeds.len(),
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and one-sided p that `better` exceeds `worse`.
fn better(sw: &Sweep, better: &str, worse: &str) -> (bool, String) {
    let (a, b) = (&sw.scores[better], &sw.scores[worse]);
    let p = wilcoxon_signed_rank(&pairs(b, a), Alternative::Greater).unwrap().p;
    let ok = mean(a) > mean(b) && p < 0.05;
    (ok, format!("{better} {:.2} > {worse} {:.2} dB (p {p:.1e})", mean(a), mean(b)))
}

fn selection_ablation(sw: &Sweep) -> Outcome {
    let (ok, text) = better(sw, "ours", "preview-nearest");
    let order: Vec<String> = ["preview-argmax", "preview-random", "preview-nearest", "ours"]
        .iter()
        .map(|m| format!("{m} {:.2}", mean(&sw.scores[*m])))
        .collect();
    outcome(
        ok && sw.seeds >= 200 && within_time(sw.elapsed, 1800.0),
        format!("{} seeds; argmin (ours) vs nearest: {text}; reported: {}; sweep {:.1}s", sw.seeds, order.join(", "), sw.elapsed.as_secs_f64()),
    )
}

fn baseline_ordering(sw: &Sweep) -> Outcome {
    let (a, ta) = better(sw, "ours", "naive-down");
    let (b, tb) = better(sw, "naive-down", "direct-lr");
    outcome(
        a && b && sw.seeds >= 200,
        format!("{}; {}; reduced-nfe (reported) {:.2} dB", ta, tb, mean(&sw.scores["reduced-nfe"])),
    )
}

// ---------------------------------------------------------------------------
// 7. velocity consistency

fn velocity_consistency(field: &Field, cond: &ConditionSource, shape: (usize, usize, usize)) -> Outcome {
    let cfg = PreviewConfig::default();
    let seeds: Vec<u64> = (0..100).collect();
    let vels: Vec<Vec<LatentGrid>> = seeds
        .par_iter()
        .map(|&s| {
            let c = PreviewConfig {
                seed: s,
                condition: cond.for_seed(s),
                ..cfg.clone()
            };
            sample_hr(field, &c, &seed_noise(s, shape.0, shape.1, shape.2).unwrap()).unwrap().trajectory.unwrap().velocities
        })
        .collect();
    let refs: Vec<&[LatentGrid]> = vels.iter().map(Vec::as_slice).collect();
    let trace = cosine_trace(&refs, cfg.downsample_step, 5).unwrap();
    let min = trace.iter().map(|p| p.mean).fold(f64::INFINITY, f64::min);
    let text: Vec<String> = trace.iter().map(|p| format!("k={} {:.4}", p.k, p.mean)).collect();
    outcome(min > 0.9, format!("100 seeds; mean cos(v_D, v_D+k): {}", text.join(", ")))
}

// ---------------------------------------------------------------------------
// 8. cost model

fn cost_model() -> Outcome {
    let cfg = PreviewConfig::default();
    let (n, d, m, s, k) = (30usize, 10usize, 5usize, 2usize, 1usize);
    // D Euler steps plus the stored velocity at t_D on the full grid; s^2
    // candidate norms, (m+1)(k+1) guided steps and the rest on the reduced
    // grid, each costing 1/s^2
    let hr = d + 1;
    let lr = s * s + (m + 1) * (k + 1) + (n - d - m - 1);
    let units = hr as f64 + lr as f64 / (s * s) as f64;
    let (chr, clr, cunits) = preview_cost(&cfg);
    let speedup = full_cost(n) / cunits;
    let x0 = seed_noise(0, 8, 8, 3).unwrap();
    let f = previewflow::field::BoxBlur::new(0.5, previewflow::field::Padding::Reflect);
    let hr_run = sample_hr(&f, &cfg, &x0).unwrap();
    let run = sample_preview(&f, &cfg, &x0, Some(&hr_run)).unwrap();
    let pass = (chr, clr) == (hr, lr)
        && cunits == 18.5
        && units == 18.5
        && speedup == 30.0 / 18.5
        && run.report.speedup == speedup
        && (1.49..=1.75).contains(&speedup);
    outcome(
        pass,
        format!("{chr} full + {clr} reduced evaluations = {cunits} units; speedup 30/18.5 = {speedup:.4}x (sampler reports {:.4}x), inside 1.49-1.75x", run.report.speedup),
    )
}

// ---------------------------------------------------------------------------
// 9. Wilcoxon oracle

fn ranks_of(abs: &[f64]) -> Vec<f64> {
    abs.iter()
        .map(|&a| {
            let less = abs.iter().filter(|&&b| b < a).count() as f64;
            let equal = abs.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

/// One-sided p by enumerating every sign pattern.
fn enumerate(diffs: &[f64], alt: Alternative) -> f64 {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let ranks = ranks_of(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let n = nz.len();
    let total = 1u64 << n;
    let mut hits = 0u64;
    for mask in 0..total {
        let wm: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        let hit = match alt {
            Alternative::Greater => wm >= w - 1e-9,
            Alternative::Less => wm <= w + 1e-9,
            Alternative::TwoSided => unreachable!(),
        };
        hits += u64::from(hit);
    }
    hits as f64 / total as f64
}

fn wilcoxon_oracle() -> Outcome {
    let mut rng = SeededRng::new(9, 903);
    let mut worst = 0f64;
    for i in 0..200 {
        let n = 1 + i % 10;
        // one decimal so ties occur
        let diffs: Vec<f64> = (0..n).map(|_| (rng.uniform_range(-3.0, 3.0) * 10.0).round() / 10.0 + 0.05).collect();
        let ps: Vec<PairedSample> = diffs.iter().map(|&d| PairedSample { before: 0.0, after: d }).collect();
        for alt in [Alternative::Greater, Alternative::Less] {
            let p = wilcoxon_exact(&ps, alt).unwrap().p;
            worst = worst.max((p - enumerate(&diffs, alt)).abs());
        }
    }
    let ex: Vec<PairedSample> = (1..=5).map(|d| PairedSample { before: 0.0, after: d as f64 }).collect();
    let r = wilcoxon_exact(&ex, Alternative::Greater).unwrap();
    outcome(
        worst <= 1e-12 && r.w == 15.0 && (r.p - 1.0 / 32.0).abs() <= 1e-15,
        format!("200 instances n<=10: max |p - enumeration| {worst:.1e}; (+1..+5) W={} p={}", r.w, r.p),
    )
}

// ---------------------------------------------------------------------------
// 10. metric units

fn metric_units() -> Outcome {
    let a = LatentGrid::filled(8, 8, 3, 0.25).unwrap();
    let b = LatentGrid::filled(8, 8, 3, 0.25 + 16.0 / 255.0).unwrap();
    let offset = psnr(&a, &b, 1.0).unwrap();
    let expect = 10.0 * (255f64 * 255.0 / 256.0).log10();
    let zero = psnr(&LatentGrid::filled(4, 4, 1, 0.0).unwrap(), &LatentGrid::filled(4, 4, 1, 1.0).unwrap(), 1.0).unwrap();
    let cap = psnr(&a, &a, 1.0).unwrap();
    let constant = piqe(&LatentGrid::filled(32, 32, 1, 0.5).unwrap(), PiqeParams::default()).unwrap().score;
    let mut rng = SeededRng::new(1, 904);
    let noise = LatentGrid::from_fn(32, 32, 1, |_, _, _| rng.uniform() as f32).unwrap();
    let noisy = piqe(&noise, PiqeParams::default()).unwrap().score;
    let pass = (offset - expect).abs() <= 1e-2
        && (offset - 24.05).abs() <= 1e-2
        && zero.abs() <= 1e-2
        && cap == PSNR_CAP
        && constant == 1.0
        && noisy > constant;
    outcome(
        pass,
        format!("offset 16/255 {offset:.3} dB, MSE = peak^2 {zero:.3} dB, identical {cap} dB; PIQE constant {constant}, noise {noisy:.2}"),
    )
}

// ---------------------------------------------------------------------------
// 11. determinism through the binary

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_previewflow")
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|x| x.to_str()), Some("csv" | "json" | "f32" | "ckpt")) {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_bin(args: &[&str]) -> Result<Vec<u8>, String> {
    let o = Command::new(bin())
        .args(args)
        .env("PREVIEWFLOW_DETERMINISTIC", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o.stdout)
}

fn determinism(work: &Path) -> Outcome {
    let cfg = work.join("det.json");
    fs::write(
        &cfg,
        r#"{"schema_version": 1, "model": {"kind": "checkpoint", "path": "train/model.ckpt"},
            "train": {"config": {"steps": 40}}, "jobs": 4, "export_images": true,
            "ablate": {"m_values": [3, 4], "alpha_values": [0.02, 0.04]}}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let steps: Vec<(&str, Vec<String>)> = vec![
        ("train", vec!["train".into(), "--config".into(), c.into(), "--out".into(), work.join("train").display().to_string()]),
        ("preview", vec!["preview".into(), "--config".into(), c.into(), "--seeds".into(), "1..4".into(), "--out".into(), work.join("preview").display().to_string()]),
        ("ablate", vec!["ablate".into(), "--config".into(), c.into(), "--seeds".into(), "0..3".into(), "--axis".into(), "m-alpha".into(), "--out".into(), work.join("ablate").display().to_string()]),
        ("stats", vec!["stats".into(), "--config".into(), c.into(), "--seeds".into(), "0..30".into(), "--out".into(), work.join("stats").display().to_string()]),
        ("compare", vec!["compare".into(), work.join("preview").display().to_string(), "--out".into(), work.join("compare").display().to_string()]),
    ];
    let mut checked = Vec::new();
    for (name, args) in &steps {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out_dir = work.join(name);
        let first = match run_bin(&args) {
            Ok(stdout) => (stdout, snapshot(&out_dir)),
            Err(e) => return outcome(false, e),
        };
        // the second run overwrites the same directory; train and preview
        // outputs are inputs of later steps, so those are rerun in place
        let second = match run_bin(&args) {
            Ok(stdout) => (stdout, snapshot(&out_dir)),
            Err(e) => return outcome(false, e),
        };
        if first.1.is_empty() || first != second {
            let differing: Vec<String> = first
                .1
                .iter()
                .filter(|(k, v)| second.1.get(*k) != Some(*v))
                .map(|(k, _)| k.display().to_string())
                .collect();
            return outcome(false, format!("{name}: outputs differ {differing:?}"));
        }
        checked.push(format!("{name} ({} files)", first.1.len()));
    }
    outcome(true, format!("byte-identical reruns: {}", checked.join(", ")))
}

// ---------------------------------------------------------------------------

fn main() {
    let total = Instant::now();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut record = |id, name, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!("{} [{id:>2}] {name}: {} ({secs:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o, secs));
    };

    record(1, "operator algebra", &mut operator_algebra);
    record(2, "exact-commutation compliance", &mut compliance);
    record(3, "guidance correctness", &mut guidance);
    record(8, "cost model", &mut cost_model);
    record(9, "statistics oracle", &mut wilcoxon_oracle);
    record(10, "metric units", &mut metric_units);

    let train_start = Instant::now();
    let dataset = ToyDataset::default();
    let arch = Architecture::toy(dataset.d, dataset.cond_arity());
    let tcfg = TrainConfig::default();
    let (net, report): (ToyNet, _) = train_toy(&dataset, arch, tcfg).expect("toy training");
    println!(
        "     toy model: {} steps in {:.1}s, held-out loss {:.4} -> {:.4}",
        report.steps,
        train_start.elapsed().as_secs_f64(),
        report.initial_loss,
        report.final_loss
    );
    let work = tempfile::tempdir().unwrap();
    let field = Field::ToyNet(net);
    let cond = ConditionSource::Dataset(dataset.clone());
    let shape = (dataset.h, dataset.w, dataset.d);

    record(4, "CG lowers the commutator norm", &mut || cg_effect(&field, &cond, shape));
    let sw = sweep(&field, &cond, shape);
    record(5, "selection ablation", &mut || selection_ablation(&sw));
    record(6, "baseline ordering", &mut || baseline_ordering(&sw));
    record(7, "velocity consistency", &mut || velocity_consistency(&field, &cond, shape));
    record(11, "determinism", &mut || determinism(work.path()));

    results.sort_by_key(|r| r.0);
    let failed: Vec<String> = results.iter().filter(|r| !r.2.pass).map(|r| r.0.to_string()).collect();
    println!(
        "acceptance: {}/{} passed in {:.1}s{}",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
