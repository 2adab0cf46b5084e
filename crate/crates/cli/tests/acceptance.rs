//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run alone with
//! `cargo test --release -p capmax-cli --test acceptance -- --nocapture`.
//! Every threshold below is fixed here and checked as stated.

use std::time::{Duration, Instant};

use capmax_cli::{cmd_optimize, solve_field, OptimizeArgs, OutArgs, SceneArgs};
use capmax_core::capacity::{analyze_matrix, capacity_from_singular_values};
use capmax_core::constants::{angular, C0, MU0};
use capmax_core::fixtures::{desk_scene, homogeneous_scene, toy_scene};
use capmax_core::optimizer::{maximize_with, multistart, starting_points, OptRunReport};
use capmax_core::{
    analyze, preset_reflection, preset_transmission, CapacityReport, DesignVector, ForwardModel,
    OptimizerConfig, Scene, SnrParams, C64,
};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "../../core/tests/support/bessel.rs"]
mod bessel;

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const HANKEL_TOL: f64 = 0.05;
const RECIPROCITY_TOL: f64 = 1e-9;
const FORWARD_BUDGET: Duration = Duration::from_secs(10);
const CAPACITY_TOL: f64 = 1e-10;
const LOGDET_TOL: f64 = 1e-8;
const GRID_SCAN_TOL: f64 = 1e-3;
const GRID_STEP: f64 = 0.05;
const TOY_BUDGET: Duration = Duration::from_secs(120);
const COND_FACTOR: f64 = 3.0;
const ORDERING_MIN: usize = 3;
const SEEDS: usize = 5;
const PRESET_BUDGET: Duration = Duration::from_secs(15 * 60);
/// Iteration caps for the preset runs, sized to fit the time budget.
const UNIFORM_ITERS: usize = 25;
const SEEDED_ITERS: usize = 12;

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(results: &mut Vec<Outcome>, id: u32, name: &'static str, passed: bool, detail: String) {
    println!(
        "[{}] {id}. {name}: {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    results.push(Outcome {
        id,
        name,
        passed,
        detail,
    });
}

fn interior_design(scene: &Scene, seed: u64) -> DesignVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = DesignVector::flat_bounds(scene);
    let flat: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| l + (h - l) * rng.random_range(0.05..0.95))
        .collect();
    DesignVector::uniform(scene, 1.0).with_flat(&flat).unwrap()
}

/// Worst relative error of the analytic gradient over every coordinate.
fn gradient_error(scene: &Scene, seed: u64) -> f64 {
    let model = ForwardModel::new(scene).unwrap();
    let x = interior_design(scene, seed);
    let g = model.grad_logdet(&x).unwrap().gradient;
    let flat = x.to_flat();
    (0..flat.len())
        .map(|l| {
            let h = GRAD_STEP * flat[l].abs();
            let eval = |d: f64| {
                let mut v = flat.clone();
                v[l] += d;
                model.objective(&x.with_flat(&v).unwrap()).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            (g[l] - fd).abs() / fd.abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_1(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let eps = gradient_error(&desk_scene(false, true), 1);
    let both = gradient_error(&desk_scene(true, true), 2);
    let elapsed = t.elapsed();
    report(
        results,
        1,
        "gradient correctness",
        eps <= GRAD_TOL && both <= GRAD_TOL && elapsed <= GRAD_BUDGET,
        format!(
            "worst rel err {eps:.2e} (eps), {both:.2e} (eps+mu), tol {GRAD_TOL:e}, {elapsed:.1?}"
        ),
    );
}

fn criterion_2(results: &mut Vec<Outcome>) {
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, scene) in [
        ("desk", desk_scene(false, true)),
        ("reflection", preset_reflection()),
    ] {
        let r = capmax_core::grad_logdet(&scene, &interior_design(&scene, 3)).unwrap();
        let (k, n, t) = (
            scene.frequencies().len(),
            scene.scatterers().len(),
            scene.transmitters().len(),
        );
        ok &= r.solves == k * (n + t);
        lines.push(format!(
            "{name}: {} solves, K(N+T) = {}",
            r.solves,
            k * (n + t)
        ));
    }
    report(results, 2, "solve-count contract", ok, lines.join("; "));
}

fn criterion_3(results: &mut Vec<Outcome>) {
    let t = Instant::now();
    let hz = 3.5e9;
    let scene = homogeneous_scene(140, 15, hz, 30.0);
    let model = ForwardModel::new(&scene).unwrap();
    let omega = angular(hz);
    let sys = model
        .assemble(&DesignVector::uniform(&scene, 1.0), omega)
        .unwrap();
    let src = scene.transmitters()[0];
    let field = sys
        .solve_multi(&[model.point_source_rhs(src).unwrap()])
        .unwrap()
        .remove(0);
    let grid = scene.grid();
    let k = omega / C0;
    let lambda = 2.0 * std::f64::consts::PI / k;
    let reach = (grid.nx / 2 - grid.pml_thickness) as f64 * grid.cell_size;
    let mut worst: f64 = 0.0;
    for cell in (0..grid.num_cells()).filter(|&c| grid.in_interior(c)) {
        let r = grid.distance(src, cell);
        if r < lambda / 2.0 || r > reach {
            continue;
        }
        let exact = bessel::hankel2(k * r) * C64::new(0.0, MU0 / 4.0);
        worst = worst.max((field.at(cell) - exact).norm() / exact.norm());
    }

    let scene = desk_scene(true, true);
    let model = ForwardModel::new(&scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cells: Vec<usize> = (0..scene.grid().num_cells())
        .filter(|&c| scene.grid().in_interior(c) && !scene.is_pec(c))
        .collect();
    let mut recip: f64 = 0.0;
    for trial in 0..5 {
        let mut xr = ChaCha8Rng::seed_from_u64(trial);
        let x = DesignVector::random(&scene, &mut xr);
        let sys = model.assemble(&x, angular(3.5e9)).unwrap();
        let a = cells[rng.random_range(0..cells.len())];
        let b = cells[rng.random_range(0..cells.len())];
        let f = sys
            .solve_multi(&[
                model.point_source_rhs(a).unwrap(),
                model.point_source_rhs(b).unwrap(),
            ])
            .unwrap();
        recip = recip.max((f[0].at(b) - f[1].at(a)).norm() / f[0].at(b).norm());
    }
    let elapsed = t.elapsed();
    report(
        results,
        3,
        "forward-model fidelity",
        worst <= HANKEL_TOL && recip <= RECIPROCITY_TOL && elapsed <= FORWARD_BUDGET,
        format!("Hankel worst rel err {worst:.4} (tol {HANKEL_TOL}), reciprocity {recip:.2e}, {elapsed:.1?}"),
    );
}

fn criterion_4(results: &mut Vec<Outcome>) {
    let unit = SnrParams::default();
    let c0 = CapacityReport::from_singular_values(vec![1.0, 1.0], 2, unit).capacity_bits;
    let c1 = capacity_from_singular_values(&[3.0, 2.0, 0.5], unit);
    let hand = 9f64.log2();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(8, 3, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let det = (m.adjoint() * &m).lu().determinant();
        let r = analyze_matrix(&m, unit);
        worst = worst.max((r.logdet_gramian - det.norm().ln()).abs());
    }
    report(
        results,
        4,
        "capacity arithmetic",
        c0.abs() <= CAPACITY_TOL && (c1 - hand).abs() <= CAPACITY_TOL && worst <= LOGDET_TOL,
        format!(
            "C(1,1) = {c0:.1e}, C(3,2,0.5) - log2 9 = {:.1e}, logdet vs dense det {worst:.1e}",
            c1 - hand
        ),
    );
}

fn monotone_and_feasible(scene: &Scene, run: &OptRunReport) -> bool {
    let monotone = run
        .trace
        .windows(2)
        .all(|w| w[1].objective_nats >= w[0].objective_nats);
    monotone
        && run.iterates.len() == run.trace.len()
        && run.iterates.iter().all(|x| x.check_bounds(scene).is_ok())
}

fn criterion_5(results: &mut Vec<Outcome>, preset_runs: &[(&str, &Scene, &OptRunReport)]) {
    let t = Instant::now();
    let scene = toy_scene(2);
    let model = ForwardModel::new(&scene).unwrap();
    let template = DesignVector::uniform(&scene, 1.0);
    let (lo, hi) = (scene.bounds().eps.lo, scene.bounds().eps.hi);
    let steps = ((hi - lo) / GRID_STEP).round() as usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        for j in 0..=steps {
            let v = [lo + GRID_STEP * i as f64, lo + GRID_STEP * j as f64];
            best = best.max(model.objective(&template.with_flat(&v).unwrap()).unwrap());
        }
    }
    let cfg = OptimizerConfig {
        num_starts: 5,
        seed: 1,
        ..OptimizerConfig::default()
    };
    let ms = multistart(&scene, &cfg).unwrap();
    let found = ms.best_run().final_report.logdet_gramian;
    let toy_ok = ms.runs.iter().all(|r| monotone_and_feasible(&scene, r));
    let elapsed = t.elapsed();

    let violations = preset_runs
        .iter()
        .filter(|(_, s, r)| !monotone_and_feasible(s, r))
        .count();
    let presets_ok = violations == 0;
    report(
        results,
        5,
        "optimizer soundness",
        found >= best - GRID_SCAN_TOL && toy_ok && presets_ok && elapsed <= TOY_BUDGET,
        format!(
            "N=2 optimum {found:.6} vs grid {best:.6} (tol {GRID_SCAN_TOL}), {violations}/{} preset runs \
             non-monotone or infeasible, toy {elapsed:.1?}",
            preset_runs.len()
        ),
    );
}

struct PresetStudy {
    scene: Scene,
    baseline: CapacityReport,
    uniform_run: OptRunReport,
    seeded: Vec<OptRunReport>,
}

impl PresetStudy {
    fn uniform_factor(&self) -> f64 {
        self.baseline.condition_number / self.uniform_run.final_report.condition_number
    }

    fn seeded_factors(&self) -> Vec<f64> {
        self.seeded
            .iter()
            .map(|r| self.baseline.condition_number / r.final_report.condition_number)
            .collect()
    }
}

fn study(scene: Scene, seed: u64) -> PresetStudy {
    let model = ForwardModel::new(&scene).unwrap();
    let uniform = DesignVector::uniform(&scene, 1.0);
    let baseline = analyze(&model.green(&uniform).unwrap(), SnrParams::default());
    let cfg = OptimizerConfig {
        max_iters: UNIFORM_ITERS,
        ..OptimizerConfig::default()
    };
    let uniform_run = maximize_with(&model, &uniform, &cfg).unwrap();
    let cfg = OptimizerConfig {
        max_iters: SEEDED_ITERS,
        ..OptimizerConfig::default()
    };
    let seeded = capmax_core::par::map(&starting_points(&scene, SEEDS, seed), |x0| {
        maximize_with(&model, x0, &cfg).unwrap()
    });
    PresetStudy {
        scene,
        baseline,
        uniform_run,
        seeded,
    }
}

fn criterion_6(results: &mut Vec<Outcome>) -> (PresetStudy, PresetStudy) {
    let t = Instant::now();
    let refl = study(preset_reflection(), 0);
    let trans = study(preset_transmission(), 0);
    let elapsed = t.elapsed();

    let r_bits = refl.uniform_run.final_report.capacity_bits - refl.baseline.capacity_bits;
    let t_bits = trans.uniform_run.final_report.capacity_bits - trans.baseline.capacity_bits;
    let (rf, tf) = (refl.uniform_factor(), trans.uniform_factor());
    let (rs, ts) = (refl.seeded_factors(), trans.seeded_factors());
    let wins = rs.iter().zip(&ts).filter(|(r, t)| t >= r).count();
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|f| format!("{f:.1}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    report(
        results,
        6,
        "qualitative reproduction",
        r_bits > 0.0 && rf >= COND_FACTOR && tf >= COND_FACTOR && wins >= ORDERING_MIN && elapsed <= PRESET_BUDGET,
        format!(
            "reflection {r_bits:+.1} bits, cond x{rf:.2}; transmission {t_bits:+.1} bits, cond x{tf:.2}; \
             seeded factors refl {} trans {}, transmission >= reflection in {wins}/{SEEDS}; {elapsed:.0?}",
            fmt(&rs),
            fmt(&ts)
        ),
    );
    (refl, trans)
}

fn criterion_7(results: &mut Vec<Outcome>, studies: &[(&str, &PresetStudy)]) {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, s) in studies {
        let uniform = DesignVector::uniform(&s.scene, 1.0);
        let (_, before, _, _) = solve_field(&s.scene, &uniform, None, None).unwrap();
        let (_, after, _, _) =
            solve_field(&s.scene, &s.uniform_run.final_design, None, None).unwrap();
        ok &= after > before;
        parts.push(format!("{name} {before:.4} -> {after:.4}"));
    }
    report(
        results,
        7,
        "phase-front perturbation",
        ok,
        format!(
            "ring phase variance, middle transmitter, top frequency: {}",
            parts.join(", ")
        ),
    );
}

fn criterion_8(results: &mut Vec<Outcome>) {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        cmd_optimize(&OptimizeArgs {
            scene: SceneArgs {
                scene: "preset:desk".into(),
                freqs: None,
                bounds: None,
            },
            out: OutArgs {
                out: dir.path().join(name),
            },
            seed: 11,
            starts: 2,
            max_iters: 10,
            uniform_start: false,
        })
        .unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let bits = |o: &capmax_cli::OptimizeOutcome| -> Vec<Vec<u64>> {
        o.report
            .runs
            .iter()
            .map(|r| r.trace.iter().map(|t| t.objective_nats.to_bits()).collect())
            .collect()
    };
    let hashes = |o: &capmax_cli::OptimizeOutcome| -> Vec<String> {
        o.manifest
            .files
            .iter()
            .map(|f| format!("{}:{}", f.path, f.sha256))
            .collect()
    };
    let same = bits(&a) == bits(&b);
    let same_files = hashes(&a) == hashes(&b);
    report(
        results,
        8,
        "determinism",
        same && same_files,
        format!(
            "objective traces {} bit-for-bit, {} output hashes {}",
            if same { "identical" } else { "differ" },
            hashes(&a).len(),
            if same_files { "identical" } else { "differ" }
        ),
    );
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    criterion_1(&mut results);
    criterion_2(&mut results);
    criterion_3(&mut results);
    criterion_4(&mut results);
    let (refl, trans) = criterion_6(&mut results);
    let mut preset_runs = Vec::new();
    for (name, s) in [("reflection", &refl), ("transmission", &trans)] {
        preset_runs.push((name, &s.scene, &s.uniform_run));
        preset_runs.extend(s.seeded.iter().map(|r| (name, &s.scene, r)));
    }
    criterion_5(&mut results, &preset_runs);
    criterion_7(
        &mut results,
        &[("reflection", &refl), ("transmission", &trans)],
    );
    criterion_8(&mut results);

    results.sort_by_key(|r| r.id);
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}. {} ({})", r.id, r.name, r.detail))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
