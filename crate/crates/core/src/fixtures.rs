//! Small scenes for tests, benchmarks and quick experiments.
//!
//! All of these solve in milliseconds, unlike the desk-scale presets.

use crate::constants::C0;
use crate::scene::{parse_scene, Scene};

/// 40×40 cells, `N = 10` scatterer pixels, `K = 2`, `T = 2`.
///
/// `mu` also enables the permeability channel; `pec` adds a short PEC
/// strip behind the scatterers.
pub fn desk_scene(mu: bool, pec: bool) -> Scene {
    let optimize = if mu { r#"["eps", "mu"]"# } else { r#"["eps"]"# };
    let pec_line = if pec {
        "pec = [{ cell_rect = [15, 15, 24, 15] }]"
    } else {
        ""
    };
    parse_scene(&format!(
        r#"
[grid]
nx = 40
ny = 40
cell_size = 0.006
pml_cells = 8

[frequencies]
hz = [3.0e9, 3.5e9]

[regions]
transmitters = [{{ cells = [[14, 12], [25, 12]] }}]
imaging = [{{ cell_rect = [12, 24, 27, 27] }}]
scatterers = [{{ cell_rect = [15, 18, 24, 18] }}]
{pec_line}

[bounds]
eps = [1.0, 10.0]
mu = [1.0, 4.0]
optimize = {optimize}
"#
    ))
    .expect("fixture scene is valid")
}

/// 20×20 cells with `n` scatterer pixels (1 ≤ n ≤ 6) in a row, one
/// transmitter, one frequency, permittivity in `[1, 3]`.
pub fn toy_scene(n: usize) -> Scene {
    assert!((1..=6).contains(&n), "toy scene supports 1..=6 pixels");
    parse_scene(&format!(
        r#"
[grid]
nx = 20
ny = 20
cell_size = 0.006
pml_cells = 5

[frequencies]
hz = [3.2e9]

[regions]
transmitters = [{{ cells = [[9, 7]] }}]
imaging = [{{ cell_rect = [7, 13, 12, 13] }}]
scatterers = [{{ cell_rect = [7, 10, {}, 10] }}]

[bounds]
eps = [1.0, 3.0]
optimize = ["eps"]
"#,
        6 + n
    ))
    .expect("fixture scene is valid")
}

/// Homogeneous square domain sampled at `cells_per_wavelength` at `hz`,
/// with a transmitter in the center cell. One scatterer pixel sits next to
/// the source so the scene is valid; at `ε_r = 1` it is invisible.
pub fn homogeneous_scene(n: usize, pml: usize, hz: f64, cells_per_wavelength: f64) -> Scene {
    let h = C0 / hz / cells_per_wavelength;
    let c = n / 2;
    parse_scene(&format!(
        r#"
[grid]
nx = {n}
ny = {n}
cell_size = {h:?}
pml_cells = {pml}

[frequencies]
hz = [{hz:?}]

[regions]
transmitters = [{{ cells = [[{c}, {c}]] }}]
imaging = [{{ cell_rect = [{pml}, {pml}, {hi}, {pml}] }}]
scatterers = [{{ cells = [[{c1}, {c}]] }}]
"#,
        hi = pml + 3,
        c1 = c + 1,
    ))
    .expect("fixture scene is valid")
}
