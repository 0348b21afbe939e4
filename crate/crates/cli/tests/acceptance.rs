//! Acceptance run. Every criterion prints one PASS or FAIL line with the
//! measured numbers. The process fails when a criterion fails that is not
//! in `KNOWN_FAILURES`, or when a listed one starts passing.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use dynba::geometry::{so3_left_jacobian, Pose, Rotation, Twist};
use dynba::graph::{
    jacobians, residual, Factor, FactorKind, MotionFactor, ObservationFactor, RigidityFactor, Values, VariableId,
};
use dynba::metrics::{ate, read_tum, rpe, AlignMode};
use dynba::simulation::{
    build_graph, generate, perturb_initialization, preset, run_ablation, AblationMode, AblationOptions,
    AblationTable, GraphStrategy,
};
use dynba::solver::{solve, PruneConfig, SolverConfig};
use nalgebra::{DMatrix, Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria that fail on this implementation, with the measured reason
/// written up in the project notes.
const KNOWN_FAILURES: [&str; 2] = ["ablation ordering", "timing ratio"];

/// Equal means within this many meters count as ties.
const TIE: f64 = 1e-6;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn strategies(modes: &[AblationMode]) -> Vec<Arc<dyn GraphStrategy>> {
    modes.iter().map(|m| m.strategy()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Cost increases over every solved cell of a table.
fn lm_violations(t: &AblationTable) -> (usize, usize) {
    let solved: Vec<_> = t.cells.iter().filter_map(|c| c.outcome.as_ref().ok()).filter(|m| m.status.is_some()).collect();
    (solved.iter().map(|m| m.cost_increases).sum(), solved.len())
}

fn ablation_ordering(lm: &mut Vec<(usize, usize)>) -> Outcome {
    use AblationMode::*;
    let clock = Instant::now();
    let modes = [BeforeBa, StaticOnly, NoMotion, NoRigidity, Full];
    let seeds: Vec<u64> = (0..10).collect();
    let t = run_ablation(&preset("group1").unwrap(), &strategies(&modes), &seeds, &AblationOptions::default()).unwrap();
    lm.push(lm_violations(&t));
    let secs = clock.elapsed().as_secs_f64();
    let m: Vec<f64> = modes.iter().map(|md| t.summary(md.name()).ate.unwrap().mean).collect();
    let (before, stat, nomo, norig, full) = (m[0], m[1], m[2], m[3], m[4]);
    let ordered = full <= norig + TIE && norig <= nomo + TIE && nomo <= stat + TIE;
    let worst_gain = before / m[1..].iter().cloned().fold(f64::MIN, f64::max);
    let pass = t.failures() == 0 && ordered && worst_gain >= 3.0 && secs < 120.0;
    Outcome {
        name: "ablation ordering",
        pass,
        detail: format!(
            "mean ATE m: full {full:.6} no-rigidity {norig:.6} no-motion {nomo:.6} static-only {stat:.6} before-ba {before:.6}; \
             ordered {ordered} (full - no-rigidity = {:.2e}); weakest BA gain {worst_gain:.2}x (need 3x); {secs:.1}s",
            full - norig
        ),
    }
}

/// Percentile bootstrap of the mean of `d`.
fn bootstrap_ci(d: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..d.len()).map(|_| d[rng.random_range(0..d.len())]).sum::<f64>() / d.len() as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * resamples as f64) as usize).min(resamples - 1)];
    (at(0.025), at(0.975))
}

fn dynamic_points(lm: &mut Vec<(usize, usize)>) -> Outcome {
    use AblationMode::*;
    let modes = [NoMotion, NoRigidity, Full];
    let seeds: Vec<u64> = (0..100).collect();
    let t = run_ablation(&preset("group1").unwrap(), &strategies(&modes), &seeds, &AblationOptions::default()).unwrap();
    lm.push(lm_violations(&t));
    let per_seed = |mode: AblationMode| -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| {
                let c = t.cells.iter().find(|c| c.mode == mode.name() && c.seed == s).unwrap();
                c.outcome.as_ref().unwrap().dynamic_ate.unwrap()
            })
            .collect()
    };
    let base = per_seed(NoMotion);
    let mut pass = t.failures() == 0;
    let mut parts = vec![format!("no-motion {:.4} m", mean(&base))];
    for (k, mode) in [NoRigidity, Full].into_iter().enumerate() {
        let x = per_seed(mode);
        let d: Vec<f64> = base.iter().zip(&x).map(|(b, v)| b - v).collect();
        let (lo, hi) = bootstrap_ci(&d, 10_000, 77 + k as u64);
        pass &= mean(&x) < mean(&base) && lo > 0.0;
        parts.push(format!("{} {:.4} m (gain {:.4}, 95% CI [{lo:.4}, {hi:.4}])", mode.name(), mean(&x), mean(&d)));
    }
    Outcome { name: "dynamic-point improvement", pass, detail: format!("100 seeds, paired bootstrap: {}", parts.join("; ")) }
}

/// Microseconds per iteration over at least `min_iterations` iterations of
/// group-I solves.
fn per_iteration(mode: AblationMode, min_iterations: usize) -> (f64, usize) {
    let config = preset("group1").unwrap();
    let (mut micros, mut iterations) = (0u64, 0usize);
    for seed in 0.. {
        let c = config.with_seed(seed);
        let (truth, dataset) = generate(&c).unwrap();
        let init = perturb_initialization(&truth, &dataset, &c);
        let graph = build_graph(&dataset, &init, mode).unwrap().unwrap();
        let (_, report) = solve(&graph, &init, &SolverConfig::default()).unwrap();
        micros += report.total_micros();
        iterations += report.iterations.len();
        if iterations >= min_iterations {
            break;
        }
    }
    (micros as f64 / iterations as f64, iterations)
}

fn timing_ratio() -> Outcome {
    let clock = Instant::now();
    // Warm caches and the allocator first; keep the best of five passes,
    // since other processes only ever add time.
    per_iteration(AblationMode::Full, 10);
    let best = |mode| (0..5).map(|_| per_iteration(mode, 50)).min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
    let (full, nf) = best(AblationMode::Full);
    let (obs, no) = best(AblationMode::ObservationsOnly);
    let ratio = full / obs;
    Outcome {
        name: "timing ratio",
        pass: ratio <= 3.0,
        detail: format!(
            "full {:.3} ms/iter over {nf} iterations, observations-only {:.3} ms/iter over {no}; ratio {ratio:.2} (need <= 3); {:.1}s",
            full / 1e3,
            obs / 1e3,
            clock.elapsed().as_secs_f64()
        ),
    }
}

fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::from_fn(|_, _| rng.random_range(-scale..scale))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::exp(&Twist::new(random_vec(rng, 2.0), random_vec(rng, 3.0)))
}

fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    a * a.transpose() * 0.01 + Matrix3::identity() * 0.002
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12)
}

/// Central differences through each variable's retraction.
fn numeric_jacobians(f: &dyn Factor, values: &Values, h: f64) -> Vec<DMatrix<f64>> {
    f.keys()
        .iter()
        .map(|k| {
            let n = k.kind().tangent_dim();
            let base = *values.get(k).unwrap();
            let mut j = DMatrix::zeros(f.dim(), n);
            for c in 0..n {
                let mut d = vec![0.0; n];
                let mut eval = |step: f64| {
                    d[c] = step;
                    let mut v = values.clone();
                    v.insert(*k, base.retract(&d)).unwrap();
                    residual(f, &v).unwrap()
                };
                let col = (eval(h) - eval(-h)) / (2.0 * h);
                j.set_column(c, &col);
            }
            j
        })
        .collect()
}

fn random_factor(rng: &mut ChaCha8Rng, kind: FactorKind) -> (Box<dyn Factor>, Values) {
    let cam = VariableId::CameraPose { frame: 3 };
    let p = |point, frame| VariableId::DynamicPoint { object: 0, part: 1, point, frame };
    let seg = VariableId::SegmentLength { object: 0, part: 1, i: 0, j: 2 };
    let mot = VariableId::ObjectMotion { object: 0, part: 1, frame: 0 };
    let mut v = Values::new();
    let f: Box<dyn Factor> = match kind {
        FactorKind::Observation => {
            v.insert_pose(cam, random_pose(rng)).unwrap();
            v.insert_point(p(0, 3), random_vec(rng, 6.0)).unwrap();
            Box::new(ObservationFactor::new(cam, p(0, 3), random_vec(rng, 6.0), random_spd(rng)).unwrap())
        }
        FactorKind::Rigidity => {
            v.insert_point(p(0, 3), random_vec(rng, 2.0)).unwrap();
            v.insert_point(p(2, 3), random_vec(rng, 2.0)).unwrap();
            v.insert_scalar(seg, rng.random_range(0.1..3.0)).unwrap();
            Box::new(RigidityFactor::new(p(0, 3), p(2, 3), seg, rng.random_range(1e-4..1e-2)).unwrap())
        }
        FactorKind::Motion => {
            v.insert_point(p(1, 3), random_vec(rng, 6.0)).unwrap();
            v.insert_point(p(1, 4), random_vec(rng, 6.0)).unwrap();
            v.insert_pose(mot, random_pose(rng)).unwrap();
            Box::new(MotionFactor::new(p(1, 3), p(1, 4), mot, random_spd(rng)).unwrap())
        }
    };
    (f, v)
}

fn jacobian_suite() -> Outcome {
    const N: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for kind in [FactorKind::Observation, FactorKind::Rigidity, FactorKind::Motion] {
        let mut w: f64 = 0.0;
        for _ in 0..N {
            let (f, v) = random_factor(&mut rng, kind);
            let analytic = jacobians(f.as_ref(), &v).unwrap();
            for ((_, a), n) in analytic.iter().zip(numeric_jacobians(f.as_ref(), &v, 1e-6)) {
                w = w.max(rel_err(a.as_slice(), n.as_slice()));
            }
        }
        worst.push((format!("{kind:?}"), w));
    }
    let h = 1e-6;
    let (mut act, mut inv_act, mut left) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..N {
        let pose = random_pose(&mut rng);
        let x = random_vec(&mut rng, 5.0);
        for (inverse, worst) in [(false, &mut act), (true, &mut inv_act)] {
            let apply = |q: &Pose, y: &Vector3<f64>| if inverse { q.inverse_act(y) } else { q.act(y) };
            let (jp, jx) = if inverse { pose.inverse_act_jacobians(&x) } else { pose.act_jacobians(&x) };
            let mut np = DMatrix::zeros(3, 6);
            for c in 0..6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                let col = (apply(&pose.retract(&Twist(d)), &x) - apply(&pose.retract(&Twist(-d)), &x)) / (2.0 * h);
                np.set_column(c, &col);
            }
            let mut nx = DMatrix::zeros(3, 3);
            for c in 0..3 {
                let mut d = Vector3::zeros();
                d[c] = h;
                nx.set_column(c, &((apply(&pose, &(x + d)) - apply(&pose, &(x - d))) / (2.0 * h)));
            }
            *worst = worst.max(rel_err(jp.as_slice(), np.as_slice())).max(rel_err(jx.as_slice(), nx.as_slice()));
        }
        // exp(w + d) ~ exp(J_l(w) d) exp(w)
        let w = random_vec(&mut rng, 1.5);
        let jl = so3_left_jacobian(&w);
        let base_inv = Rotation::exp(&w).inverse();
        let mut n = DMatrix::zeros(3, 3);
        for c in 0..3 {
            let mut d = Vector3::zeros();
            d[c] = h;
            let plus = Rotation::exp(&(w + d)).compose(&base_inv).log();
            let minus = Rotation::exp(&(w - d)).compose(&base_inv).log();
            n.set_column(c, &((plus - minus) / (2.0 * h)));
        }
        left = left.max(rel_err(jl.as_slice(), n.as_slice()));
    }
    worst.push(("act".into(), act));
    worst.push(("inverse_act".into(), inv_act));
    worst.push(("so3_left_jacobian".into(), left));
    let pass = worst.iter().all(|(_, w)| *w < 1e-5);
    let detail = worst.iter().map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome { name: "jacobian suite", pass, detail: format!("{N} instances each, worst relative error: {detail}") }
}

fn noiseless_exactness(lm: &mut Vec<(usize, usize)>) -> Outcome {
    let cfg = preset("group1").unwrap().noiseless();
    let t = run_ablation(&cfg, &strategies(&AblationMode::ALL), &[0, 1, 2], &AblationOptions::default()).unwrap();
    lm.push(lm_violations(&t));
    let cells: Vec<_> = t.cells.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
    let max = |f: &dyn Fn(&dynba::simulation::CellMetrics) -> f64| cells.iter().map(|m| f(m)).fold(0.0, f64::max);
    let ate = max(&|m| m.ate);
    let seg = max(&|m| m.segment_error.unwrap_or(0.0));
    let cost = max(&|m| m.final_cost);
    let pass = t.failures() == 0 && ate < 1e-9 && seg < 1e-6 && cost < 1e-12;
    Outcome {
        name: "noiseless exactness",
        pass,
        detail: format!("{} cells over 6 modes: max ATE {ate:.1e} m, max segment error {seg:.1e} m, max final cost {cost:.1e}", cells.len()),
    }
}

fn outlier_pruning(lm: &mut Vec<(usize, usize)>) -> Outcome {
    let seeds: Vec<u64> = (0..20).collect();
    let opts = AblationOptions {
        solver: SolverConfig { prune: Some(PruneConfig::default()), ..SolverConfig::default() },
        corrupt_motion: Some(0.1),
        ..AblationOptions::default()
    };
    let t = run_ablation(&preset("group1").unwrap(), &strategies(&[AblationMode::Full]), &seeds, &opts).unwrap();
    lm.push(lm_violations(&t));
    let (mut rates, mut false_removals) = (Vec::new(), Vec::new());
    for c in &t.cells {
        let m = c.outcome.as_ref().unwrap();
        let injected: BTreeSet<_> = m.injected.iter().collect();
        let removed: BTreeSet<_> = m.removed.iter().collect();
        rates.push(injected.intersection(&removed).count() as f64 / injected.len() as f64);
        false_removals.push(removed.difference(&injected).count() as f64);
    }
    let (rate, fp) = (mean(&rates), mean(&false_removals));
    Outcome {
        name: "outlier pruning",
        pass: t.failures() == 0 && rate >= 0.9 && fp <= 1.0,
        detail: format!("20 seeds, 10% corrupted motion factors: detection {:.1}%, {fp:.2} false removals per run", rate * 100.0),
    }
}

fn metrics_oracle() -> Outcome {
    let est_text = fs::read_to_string(fixture("toy_est.tum")).unwrap();
    let gt_text = fs::read_to_string(fixture("toy_gt.tum")).unwrap();
    let (est, gt) = (read_tum(&est_text).unwrap(), read_tum(&gt_text).unwrap());
    let (e, g) = (parse_tum(&est_text), parse_tum(&gt_text));
    let mut worst: f64 = 0.0;
    let (a, _, _) = ate(&est, &gt, AlignMode::Rigid).unwrap();
    worst = worst.max((a - reference_ate(&e, &g)).abs());
    for delta in 1..=3 {
        let r = rpe(&est, &gt, delta).unwrap();
        let (rot, trans) = reference_rpe(&e, &g, delta);
        worst = worst.max((r.rot_rmse_deg - rot).abs()).max((r.trans_rmse - trans).abs());
    }
    Outcome {
        name: "metrics oracle equivalence",
        pass: worst <= 1e-12,
        detail: format!("fixture pair, ATE and RPE (delta 1..3) vs reference loops: max difference {worst:.1e}"),
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str, workers: &str| {
        let out = tmp.path().join(dir);
        let o = dynba(["ablate", "--preset", "group1", "--seeds", "0..10", "--workers", workers, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        ["results.csv", "cells.csv"].map(|f| fs::read(out.join(f)).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "8");
    Outcome {
        name: "determinism",
        pass: a == b && a == c,
        detail: format!("ablate group1, 10 seeds, 6 modes: repeat identical {}, workers 1 vs 8 identical {}", a == b, a == c),
    }
}

fn lm_contract(lm: &[(usize, usize)]) -> Outcome {
    let violations: usize = lm.iter().map(|x| x.0).sum();
    let solves: usize = lm.iter().map(|x| x.1).sum();
    Outcome {
        name: "LM contract",
        pass: violations == 0,
        detail: format!("{violations} accepted-cost increases over {solves} solves"),
    }
}

fn main() {
    let mut lm = Vec::new();
    let mut outcomes = vec![
        ablation_ordering(&mut lm),
        dynamic_points(&mut lm),
        timing_ratio(),
        jacobian_suite(),
        noiseless_exactness(&mut lm),
        outlier_pruning(&mut lm),
        metrics_oracle(),
        determinism(),
    ];
    outcomes.push(lm_contract(&lm));
    let mut unexpected = Vec::new();
    for o in &outcomes {
        println!("{}  {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        if o.pass == KNOWN_FAILURES.contains(&o.name) {
            unexpected.push(o.name);
        }
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("{passed}/{} criteria pass; known failures: {}", outcomes.len(), KNOWN_FAILURES.join(", "));
    if !unexpected.is_empty() {
        eprintln!("unexpected result for: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
