//! Analytic gradient against finite differences and structural contracts.

use capmax_core::fixtures::{desk_scene, toy_scene};
use capmax_core::gradient::logdet_cholesky;
use capmax_core::{gramian, DesignVector, ForwardModel, Scene};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn central_difference(model: &ForwardModel, x: &DesignVector, var: usize, rel: f64) -> f64 {
    let flat = x.to_flat();
    let h = rel * flat[var].abs();
    let eval = |delta: f64| {
        let mut v = flat.clone();
        v[var] += delta;
        model.objective(&x.with_flat(&v).unwrap()).unwrap()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

/// Interior design so that `±h` stays inside the box.
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

fn check_all_coordinates(scene: &Scene, seed: u64) -> f64 {
    let model = ForwardModel::new(scene).unwrap();
    let x = interior_design(scene, seed);
    let r = model.grad_logdet(&x).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..scene.num_variables() {
        let fd = central_difference(&model, &x, l, 1e-5);
        worst = worst.max((r.gradient[l] - fd).abs() / fd.abs());
    }
    worst
}

#[test]
fn permittivity_gradient_matches_central_differences() {
    let worst = check_all_coordinates(&desk_scene(false, true), 1);
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn permeability_gradient_matches_central_differences() {
    let worst = check_all_coordinates(&desk_scene(true, true), 2);
    assert!(worst <= 1e-5, "worst relative error {worst}");
}

#[test]
fn solve_count_is_k_times_n_plus_t() {
    let scene = desk_scene(false, false);
    let r = capmax_core::grad_logdet(&scene, &interior_design(&scene, 3)).unwrap();
    let (k, n, t) = (
        scene.frequencies().len(),
        scene.scatterers().len(),
        scene.transmitters().len(),
    );
    assert_eq!((k, n, t), (2, 10, 2));
    assert_eq!(r.solves, k * (n + t));
}

#[test]
fn permeability_adjoints_cover_neighbor_cells() {
    // Row of 10 pixels: 10 + 2·10 + 2 neighbors when μ is optimized.
    let scene = desk_scene(true, false);
    let r = capmax_core::grad_logdet(&scene, &interior_design(&scene, 3)).unwrap();
    assert_eq!(r.solves, 2 * (32 + 2));
}

#[test]
fn objective_matches_gramian_determinant() {
    let scene = desk_scene(false, true);
    let x = interior_design(&scene, 5);
    let r = capmax_core::grad_logdet(&scene, &x).unwrap();
    let f = gramian(&r.green);
    let det = f.clone().lu().determinant();
    assert!((det.norm().ln() - r.objective).abs() <= 1e-8 * r.objective.abs());
    assert!((logdet_cholesky(&f).unwrap().0 - r.objective).abs() <= 1e-12 * r.objective.abs());
}

#[test]
fn pixel_enclosed_by_pec_has_zero_gradient() {
    let scene = capmax_core::parse_scene(
        r#"
[grid]
nx = 24
ny = 24
cell_size = 0.006
pml_cells = 5

[frequencies]
hz = [3.0e9, 3.4e9]

[regions]
transmitters = [{ cells = [[8, 7], [14, 7]] }]
imaging = [{ cell_rect = [7, 15, 14, 16] }]
scatterers = [{ cells = [[9, 11], [15, 11]] }]
pec = [{ cells = [[8, 10], [9, 10], [10, 10], [8, 11], [10, 11], [8, 12], [9, 12], [10, 12]] }]

[bounds]
eps = [1.0, 6.0]
mu = [1.0, 3.0]
optimize = ["eps", "mu"]
"#,
    )
    .unwrap();
    let r = capmax_core::grad_logdet(&scene, &interior_design(&scene, 6)).unwrap();
    // Variables: [eps_0, eps_1, mu_0, mu_1]; pixel 0 is enclosed.
    assert_eq!(r.gradient[0], 0.0);
    assert_eq!(r.gradient[2], 0.0);
    assert!(r.gradient[1] != 0.0 && r.gradient[3] != 0.0);
}

#[test]
fn rank_deficient_design_is_reported() {
    // A PEC box around the imaging cells makes G identically zero.
    let scene = capmax_core::parse_scene(
        r#"
[grid]
nx = 20
ny = 20
cell_size = 0.006
pml_cells = 5

[frequencies]
hz = [3.0e9]

[regions]
transmitters = [{ cells = [[9, 6]] }]
imaging = [{ cells = [[9, 12], [10, 12]] }]
scatterers = [{ cells = [[9, 8]] }]
pec = [
    { cell_rect = [7, 10, 12, 10] },
    { cell_rect = [7, 14, 12, 14] },
    { cell_rect = [7, 11, 7, 13] },
    { cell_rect = [12, 11, 12, 13] },
]

[bounds]
eps = [1.0, 6.0]
"#,
    )
    .unwrap();
    let x = DesignVector::uniform(&scene, 2.0);
    let err = capmax_core::grad_logdet(&scene, &x).unwrap_err();
    assert!(
        matches!(err, capmax_core::Error::RankDeficient { .. }),
        "{err}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn random_coordinate_matches_central_difference(seed in any::<u64>(), pick in 0usize..3) {
        let scene = toy_scene(3);
        let model = ForwardModel::new(&scene).unwrap();
        let x = interior_design(&scene, seed);
        let r = model.grad_logdet(&x).unwrap();
        let fd = central_difference(&model, &x, pick, 1e-5);
        let rel = (r.gradient[pick] - fd).abs() / fd.abs().max(1e-9);
        prop_assert!(rel <= 1e-5, "analytic {} fd {} rel {}", r.gradient[pick], fd, rel);
    }
}
