//! Problem geometry, media, frequency sweep and design bounds.
//!
//! Cells are addressed by a flat index `iy * nx + ix`. The outer
//! `pml_thickness` cells on every side form the absorbing layer; every
//! region (transmitters, imaging cells, scatterer pixels, PEC) must lie in
//! the remaining interior.
//!
//! All user-facing constitutive values are relative (`eps_r`, `mu_r`).
//! Conversion to SI happens inside operator assembly only.
//!
//! The on-disk format is TOML; see `docs/scene-format.md` for the grammar.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{angular, C0};

const REFLECTION_SCENE: &str = include_str!("../presets/reflection.scene");
const TRANSMISSION_SCENE: &str = include_str!("../presets/transmission.scene");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invariant violated ({invariant}): {detail}")]
    Invariant {
        invariant: &'static str,
        detail: String,
    },

    #[error("overlapping regions {first} and {second} at cells {cells:?}")]
    Overlap {
        first: &'static str,
        second: &'static str,
        /// Offending cells as `(ix, iy)`.
        cells: Vec<(usize, usize)>,
    },

    #[error("region in PML: {region} has cells {cells:?} outside the interior")]
    RegionInPml {
        region: &'static str,
        cells: Vec<(usize, usize)>,
    },

    #[error("design vector: {0}")]
    Design(String),
}

fn invariant(invariant: &'static str, detail: impl Into<String>) -> SceneError {
    SceneError::Invariant {
        invariant,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    /// Square cell edge in meters.
    pub cell_size: f64,
    /// PML thickness in cells, applied on all four sides.
    pub pml_thickness: usize,
}

impl GridSpec {
    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(ix < self.nx && iy < self.ny);
        iy * self.nx + ix
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Cell-center position in meters, origin at the lower-left grid corner.
    pub fn center(&self, cell: usize) -> (f64, f64) {
        let (ix, iy) = self.coords(cell);
        (
            (ix as f64 + 0.5) * self.cell_size,
            (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    /// True when the cell lies outside the PML.
    pub fn in_interior(&self, cell: usize) -> bool {
        if cell >= self.num_cells() {
            return false;
        }
        let (ix, iy) = self.coords(cell);
        let p = self.pml_thickness;
        ix >= p && ix + p < self.nx && iy >= p && iy + p < self.ny
    }

    /// Euclidean distance between two cell centers in meters.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (xa, ya) = self.center(a);
        let (xb, yb) = self.center(b);
        (xa - xb).hypot(ya - yb)
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.nx < 8 || self.ny < 8 {
            return Err(invariant(
                "nx >= 8, ny >= 8",
                format!("grid is {}x{}", self.nx, self.ny),
            ));
        }
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(invariant(
                "cell_size > 0",
                format!("cell_size = {}", self.cell_size),
            ));
        }
        if self.pml_thickness < 4 {
            return Err(invariant(
                "pml_thickness >= 4",
                format!("pml_thickness = {}", self.pml_thickness),
            ));
        }
        if 2 * self.pml_thickness >= self.nx.min(self.ny) {
            return Err(invariant(
                "PML leaves a nonempty interior",
                format!(
                    "pml_thickness = {} on a {}x{} grid",
                    self.pml_thickness, self.nx, self.ny
                ),
            ));
        }
        Ok(())
    }
}

/// Frequency sweep; stored in hertz so that scene files round-trip exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySpec {
    hz: Vec<f64>,
}

impl FrequencySpec {
    pub fn from_hz(hz: Vec<f64>) -> Result<Self, SceneError> {
        if hz.is_empty() {
            return Err(invariant("K >= 1", "no frequencies given"));
        }
        if hz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(invariant("frequencies positive", format!("{hz:?}")));
        }
        if hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invariant(
                "frequencies strictly increasing",
                format!("{hz:?}"),
            ));
        }
        Ok(Self { hz })
    }

    /// `count` frequencies linearly spaced over `[start, stop]` hertz.
    pub fn linspace_hz(start: f64, stop: f64, count: usize) -> Result<Self, SceneError> {
        let hz = match count {
            0 => Vec::new(),
            1 => vec![start],
            _ => (0..count)
                .map(|i| start + (stop - start) * i as f64 / (count - 1) as f64)
                .collect(),
        };
        Self::from_hz(hz)
    }

    pub fn hz(&self) -> &[f64] {
        &self.hz
    }

    /// Angular frequencies `ω_k` in rad/s.
    pub fn omegas(&self) -> Vec<f64> {
        self.hz.iter().map(|&f| angular(f)).collect()
    }

    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }

    pub fn max_hz(&self) -> f64 {
        *self.hz.last().expect("nonempty by construction")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }
}

/// Which constitutive parameters are design variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub eps: bool,
    pub mu: bool,
}

impl Channels {
    pub const EPS: Channels = Channels {
        eps: true,
        mu: false,
    };
    pub const BOTH: Channels = Channels {
        eps: true,
        mu: true,
    };

    pub fn count(&self) -> usize {
        self.eps as usize + self.mu as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Permittivity,
    Permeability,
}

/// Box bounds shared by every pixel of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub eps: Interval,
    pub mu: Interval,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            eps: Interval::new(1.0, 10.0),
            mu: Interval::new(1.0, 1.0),
        }
    }
}

/// Everything needed to build a [`Scene`]; validated by [`Scene::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct SceneParts {
    pub grid: GridSpec,
    pub frequencies: FrequencySpec,
    pub transmitters: Vec<usize>,
    pub imaging: Vec<usize>,
    pub scatterers: Vec<usize>,
    pub pec: Vec<usize>,
    pub background_eps_r: f64,
    pub background_mu_r: f64,
    pub bounds: Bounds,
    pub channels: Channels,
}

/// A validated problem description. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    parts: SceneParts,
    pec_mask: Vec<bool>,
    pixel_of_cell: Vec<Option<u32>>,
}

impl Scene {
    pub fn new(mut parts: SceneParts) -> Result<Self, SceneError> {
        parts.grid.validate()?;
        let grid = parts.grid;

        let lambda_min = C0 / parts.frequencies.max_hz();
        if grid.cell_size > lambda_min / 8.0 {
            return Err(invariant(
                "cell_size <= lambda_min/8",
                format!(
                    "cell_size = {:.4e} m, lambda_min = {:.4e} m",
                    grid.cell_size, lambda_min
                ),
            ));
        }
        if grid.cell_size > lambda_min / 10.0 {
            log::warn!(
                "cell_size {:.4e} m is coarser than lambda_min/10 = {:.4e} m",
                grid.cell_size,
                lambda_min / 10.0
            );
        }

        for (name, v) in [
            ("background_eps_r > 0", parts.background_eps_r),
            ("background_mu_r > 0", parts.background_mu_r),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invariant(name, format!("{v}")));
            }
        }

        parts.pec.sort_unstable();
        parts.pec.dedup();

        let regions: [(&'static str, &[usize]); 4] = [
            ("transmitters", &parts.transmitters),
            ("imaging", &parts.imaging),
            ("scatterers", &parts.scatterers),
            ("pec", &parts.pec),
        ];
        for (name, cells) in regions {
            let outside: Vec<_> = cells
                .iter()
                .filter(|&&c| !grid.in_interior(c))
                .map(|&c| grid.coords(c))
                .collect();
            if !outside.is_empty() {
                return Err(SceneError::RegionInPml {
                    region: name,
                    cells: outside,
                });
            }
            let mut seen = BTreeSet::new();
            if let Some(dup) = cells.iter().find(|&&c| !seen.insert(c)) {
                return Err(invariant(
                    "region cells are distinct",
                    format!("{name} lists cell {:?} twice", grid.coords(*dup)),
                ));
            }
        }
        for i in 0..regions.len() {
            let a: BTreeSet<usize> = regions[i].1.iter().copied().collect();
            for other in regions.iter().skip(i + 1) {
                let shared: Vec<_> = other
                    .1
                    .iter()
                    .filter(|c| a.contains(c))
                    .map(|&c| grid.coords(c))
                    .collect();
                if !shared.is_empty() {
                    return Err(SceneError::Overlap {
                        first: regions[i].0,
                        second: other.0,
                        cells: shared,
                    });
                }
            }
        }

        let (t, m, n) = (
            parts.transmitters.len(),
            parts.imaging.len(),
            parts.scatterers.len(),
        );
        if t == 0 || m == 0 || n == 0 {
            return Err(invariant(
                "T >= 1, M >= 1, N >= 1",
                format!("T = {t}, M = {m}, N = {n}"),
            ));
        }
        let k = parts.frequencies.len();
        if m <= k * t {
            return Err(invariant(
                "M > KT",
                format!("M = {m}, K = {k}, T = {t}, KT = {}", k * t),
            ));
        }

        if !parts.channels.eps && !parts.channels.mu {
            return Err(invariant(
                "at least one design channel",
                "neither eps nor mu is optimized",
            ));
        }
        for (name, iv) in [("eps", parts.bounds.eps), ("mu", parts.bounds.mu)] {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(invariant(
                    "x_L <= x_R",
                    format!("{name} bounds [{}, {}]", iv.lo, iv.hi),
                ));
            }
            if iv.lo < 1.0 {
                return Err(invariant(
                    "x_L >= 1",
                    format!("{name} lower bound {} admits metamaterials", iv.lo),
                ));
            }
        }
        if !parts.channels.mu && !parts.bounds.mu.contains(parts.background_mu_r) {
            return Err(invariant(
                "fixed mu within bounds",
                format!(
                    "background_mu_r = {} outside mu bounds while mu is not optimized",
                    parts.background_mu_r
                ),
            ));
        }

        let mut pec_mask = vec![false; grid.num_cells()];
        for &c in &parts.pec {
            pec_mask[c] = true;
        }
        let mut pixel_of_cell = vec![None; grid.num_cells()];
        for (p, &c) in parts.scatterers.iter().enumerate() {
            pixel_of_cell[c] = Some(p as u32);
        }
        Ok(Self {
            parts,
            pec_mask,
            pixel_of_cell,
        })
    }

    pub fn parts(&self) -> &SceneParts {
        &self.parts
    }

    pub fn into_parts(self) -> SceneParts {
        self.parts
    }

    pub fn grid(&self) -> &GridSpec {
        &self.parts.grid
    }

    pub fn frequencies(&self) -> &FrequencySpec {
        &self.parts.frequencies
    }

    pub fn transmitters(&self) -> &[usize] {
        &self.parts.transmitters
    }

    pub fn imaging(&self) -> &[usize] {
        &self.parts.imaging
    }

    pub fn scatterers(&self) -> &[usize] {
        &self.parts.scatterers
    }

    pub fn pec(&self) -> &[usize] {
        &self.parts.pec
    }

    pub fn is_pec(&self, cell: usize) -> bool {
        self.pec_mask.get(cell).copied().unwrap_or(false)
    }

    /// Design-pixel index of a cell, if it is a scatterer pixel.
    pub fn pixel_of(&self, cell: usize) -> Option<usize> {
        self.pixel_of_cell
            .get(cell)
            .copied()
            .flatten()
            .map(|p| p as usize)
    }

    pub fn background_eps_r(&self) -> f64 {
        self.parts.background_eps_r
    }

    pub fn background_mu_r(&self) -> f64 {
        self.parts.background_mu_r
    }

    pub fn bounds(&self) -> &Bounds {
        &self.parts.bounds
    }

    pub fn channels(&self) -> Channels {
        self.parts.channels
    }

    /// `K·T`, the number of columns of the sensing matrix.
    pub fn num_channels(&self) -> usize {
        self.parts.frequencies.len() * self.parts.transmitters.len()
    }

    /// Number of scalar design variables.
    pub fn num_variables(&self) -> usize {
        self.parts.scatterers.len() * self.parts.channels.count()
    }

    /// Rebuild with a different frequency sweep.
    pub fn with_frequencies(&self, frequencies: FrequencySpec) -> Result<Self, SceneError> {
        let mut parts = self.parts.clone();
        parts.frequencies = frequencies;
        Self::new(parts)
    }

    /// Rebuild with different permittivity bounds.
    pub fn with_eps_bounds(&self, eps: Interval) -> Result<Self, SceneError> {
        let mut parts = self.parts.clone();
        parts.bounds.eps = eps;
        Self::new(parts)
    }

    /// Rebuild with a different channel selection.
    pub fn with_channels(&self, channels: Channels, mu: Interval) -> Result<Self, SceneError> {
        let mut parts = self.parts.clone();
        parts.channels = channels;
        parts.bounds.mu = mu;
        Self::new(parts)
    }

    /// Renders the scene in the on-disk format with every region as an
    /// explicit cell list, so `parse_scene(&scene.to_scene_string())`
    /// reproduces `self` exactly.
    pub fn to_scene_string(&self) -> String {
        let p = &self.parts;
        let g = &p.grid;
        let mut s = String::new();
        let _ = writeln!(s, "[grid]");
        let _ = writeln!(s, "nx = {}", g.nx);
        let _ = writeln!(s, "ny = {}", g.ny);
        let _ = writeln!(s, "cell_size = {:?}", g.cell_size);
        let _ = writeln!(s, "pml_cells = {}", g.pml_thickness);
        let _ = writeln!(s, "background_eps_r = {:?}", p.background_eps_r);
        let _ = writeln!(s, "background_mu_r = {:?}", p.background_mu_r);
        let _ = writeln!(s, "\n[frequencies]");
        let hz: Vec<String> = p
            .frequencies
            .hz()
            .iter()
            .map(|f| format!("{f:?}"))
            .collect();
        let _ = writeln!(s, "hz = [{}]", hz.join(", "));
        let _ = writeln!(s, "\n[regions]");
        for (name, cells) in [
            ("transmitters", &p.transmitters),
            ("imaging", &p.imaging),
            ("scatterers", &p.scatterers),
            ("pec", &p.pec),
        ] {
            let list: Vec<String> = cells
                .iter()
                .map(|&c| {
                    let (ix, iy) = g.coords(c);
                    format!("[{ix}, {iy}]")
                })
                .collect();
            let _ = writeln!(s, "{name} = [{{ cells = [{}] }}]", list.join(", "));
        }
        let _ = writeln!(s, "\n[bounds]");
        let _ = writeln!(s, "eps = [{:?}, {:?}]", p.bounds.eps.lo, p.bounds.eps.hi);
        let _ = writeln!(s, "mu = [{:?}, {:?}]", p.bounds.mu.lo, p.bounds.mu.hi);
        let mut opt = Vec::new();
        if p.channels.eps {
            opt.push("\"eps\"");
        }
        if p.channels.mu {
            opt.push("\"mu\"");
        }
        let _ = writeln!(s, "optimize = [{}]", opt.join(", "));
        s
    }
}

// ---------------------------------------------------------------------------
// Scene file format

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    grid: GridSection,
    frequencies: FrequencySection,
    regions: RegionsSection,
    #[serde(default)]
    bounds: BoundsSection,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    nx: usize,
    ny: usize,
    cell_size: f64,
    pml_cells: usize,
    #[serde(default = "one")]
    background_eps_r: f64,
    #[serde(default = "one")]
    background_mu_r: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrequencySection {
    hz: Option<Vec<f64>>,
    linspace: Option<Linspace>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Linspace {
    start: f64,
    stop: f64,
    count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegionsSection {
    transmitters: Vec<Shape>,
    imaging: Vec<Shape>,
    scatterers: Vec<Shape>,
    #[serde(default)]
    pec: Vec<Shape>,
}

/// One region component. Exactly one key must be present.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Shape {
    /// `[x0, y0, x1, y1]` meters; selects cells whose centers lie inside.
    rect: Option<[f64; 4]>,
    /// `[ix0, iy0, ix1, iy1]` inclusive cell indices.
    cell_rect: Option<[usize; 4]>,
    cells: Option<Vec<[usize; 2]>>,
    /// Positions in meters; each selects the cell containing it.
    points: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsSection {
    eps: Option<[f64; 2]>,
    mu: Option<[f64; 2]>,
    optimize: Option<Vec<String>>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, column)
}

fn resolve_shape(
    grid: &GridSpec,
    region: &'static str,
    shape: &Shape,
) -> Result<Vec<usize>, SceneError> {
    let given = shape.rect.is_some() as u8
        + shape.cell_rect.is_some() as u8
        + shape.cells.is_some() as u8
        + shape.points.is_some() as u8;
    if given != 1 {
        return Err(invariant(
            "one shape key per region entry",
            format!("{region}: expected exactly one of rect, cell_rect, cells, points"),
        ));
    }
    let out_of_grid = |what: String| {
        invariant(
            "region inside grid",
            format!("{region}: {what} lies outside the grid"),
        )
    };
    if let Some([x0, y0, x1, y1]) = shape.rect {
        let h = grid.cell_size;
        let tol = 1e-9 * h;
        let mut cells = Vec::new();
        for iy in 0..grid.ny {
            let y = (iy as f64 + 0.5) * h;
            if y < y0.min(y1) - tol || y > y0.max(y1) + tol {
                continue;
            }
            for ix in 0..grid.nx {
                let x = (ix as f64 + 0.5) * h;
                if x >= x0.min(x1) - tol && x <= x0.max(x1) + tol {
                    cells.push(grid.index(ix, iy));
                }
            }
        }
        if cells.is_empty() {
            return Err(invariant(
                "region nonempty",
                format!(
                    "{region}: rect {:?} contains no cell centers",
                    [x0, y0, x1, y1]
                ),
            ));
        }
        return Ok(cells);
    }
    if let Some([ix0, iy0, ix1, iy1]) = shape.cell_rect {
        if ix0 > ix1 || iy0 > iy1 {
            return Err(invariant(
                "cell_rect ordered",
                format!(
                    "{region}: cell_rect {:?} has min > max",
                    [ix0, iy0, ix1, iy1]
                ),
            ));
        }
        if ix1 >= grid.nx || iy1 >= grid.ny {
            return Err(out_of_grid(format!("cell_rect {:?}", [ix0, iy0, ix1, iy1])));
        }
        return Ok((iy0..=iy1)
            .flat_map(|iy| (ix0..=ix1).map(move |ix| (ix, iy)))
            .map(|(ix, iy)| grid.index(ix, iy))
            .collect());
    }
    if let Some(list) = &shape.cells {
        return list
            .iter()
            .map(|&[ix, iy]| {
                if ix < grid.nx && iy < grid.ny {
                    Ok(grid.index(ix, iy))
                } else {
                    Err(out_of_grid(format!("cell [{ix}, {iy}]")))
                }
            })
            .collect();
    }
    let points = shape.points.as_ref().expect("counted above");
    points
        .iter()
        .map(|&[x, y]| {
            let ix = (x / grid.cell_size).floor();
            let iy = (y / grid.cell_size).floor();
            if ix >= 0.0 && iy >= 0.0 && (ix as usize) < grid.nx && (iy as usize) < grid.ny {
                Ok(grid.index(ix as usize, iy as usize))
            } else {
                Err(out_of_grid(format!("point [{x}, {y}]")))
            }
        })
        .collect()
}

fn resolve_region(
    grid: &GridSpec,
    region: &'static str,
    shapes: &[Shape],
) -> Result<Vec<usize>, SceneError> {
    let mut cells = Vec::new();
    for shape in shapes {
        cells.extend(resolve_shape(grid, region, shape)?);
    }
    Ok(cells)
}

/// Parses a scene document. See `docs/scene-format.md`.
pub fn parse_scene(text: &str) -> Result<Scene, SceneError> {
    let file: SceneFile = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map(|s| line_col(text, s.start)).unwrap_or((0, 0));
        SceneError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;

    let grid = GridSpec {
        nx: file.grid.nx,
        ny: file.grid.ny,
        cell_size: file.grid.cell_size,
        pml_thickness: file.grid.pml_cells,
    };
    grid.validate()?;

    let frequencies = match (&file.frequencies.hz, &file.frequencies.linspace) {
        (Some(hz), None) => FrequencySpec::from_hz(hz.clone())?,
        (None, Some(l)) => FrequencySpec::linspace_hz(l.start, l.stop, l.count)?,
        _ => {
            return Err(invariant(
                "frequencies given once",
                "[frequencies] needs exactly one of `hz` or `linspace`",
            ))
        }
    };

    let regions = &file.regions;
    let transmitters = resolve_region(&grid, "transmitters", &regions.transmitters)?;
    let imaging = resolve_region(&grid, "imaging", &regions.imaging)?;
    let scatterers = resolve_region(&grid, "scatterers", &regions.scatterers)?;
    let pec = resolve_region(&grid, "pec", &regions.pec)?;

    let defaults = Bounds::default();
    let to_interval =
        |v: Option<[f64; 2]>, d: Interval| v.map_or(d, |[lo, hi]| Interval::new(lo, hi));
    let bounds = Bounds {
        eps: to_interval(file.bounds.eps, defaults.eps),
        mu: to_interval(file.bounds.mu, defaults.mu),
    };
    let channels = match &file.bounds.optimize {
        None => Channels::EPS,
        Some(list) => {
            let mut ch = Channels {
                eps: false,
                mu: false,
            };
            for name in list {
                match name.as_str() {
                    "eps" => ch.eps = true,
                    "mu" => ch.mu = true,
                    other => {
                        return Err(invariant(
                            "optimize lists eps and/or mu",
                            format!("unknown channel {other:?}"),
                        ))
                    }
                }
            }
            ch
        }
    };

    Scene::new(SceneParts {
        grid,
        frequencies,
        transmitters,
        imaging,
        scatterers,
        pec,
        background_eps_r: file.grid.background_eps_r,
        background_mu_r: file.grid.background_mu_r,
        bounds,
        channels,
    })
}

/// Reflection-mode antenna: a PEC strip with a layer of scatterer pixels on
/// its face, three line sources in front of it, and the imaging region
/// beyond the sources.
pub fn preset_reflection() -> Scene {
    parse_scene(REFLECTION_SCENE).expect("shipped reflection preset is valid")
}

/// Transmission-mode antenna: a scatterer block between three line sources
/// and the imaging region, in free space.
pub fn preset_transmission() -> Scene {
    parse_scene(TRANSMISSION_SCENE).expect("shipped transmission preset is valid")
}

/// Text of the shipped preset scene files.
pub fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "reflection" => Some(REFLECTION_SCENE),
        "transmission" => Some(TRANSMISSION_SCENE),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Design vector

/// Per-pixel constitutive values of the scatterers, shared by all
/// frequencies (non-dispersive media).
///
/// The flat optimization vector is `[eps_r..., mu_r...]`, each block present
/// only when that channel is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    eps_r: Vec<f64>,
    mu_r: Vec<f64>,
    channels: Channels,
}

impl DesignVector {
    /// Every optimized channel set to `value`; fixed channels use the
    /// background value.
    pub fn uniform(scene: &Scene, value: f64) -> Self {
        let n = scene.scatterers().len();
        let ch = scene.channels();
        Self {
            eps_r: vec![
                if ch.eps {
                    value
                } else {
                    scene.background_eps_r()
                };
                n
            ],
            mu_r: vec![
                if ch.mu {
                    value
                } else {
                    scene.background_mu_r()
                };
                n
            ],
            channels: ch,
        }
    }

    pub fn new(scene: &Scene, eps_r: Vec<f64>, mu_r: Option<Vec<f64>>) -> Result<Self, SceneError> {
        let n = scene.scatterers().len();
        let mu_r = mu_r.unwrap_or_else(|| vec![scene.background_mu_r(); n]);
        if eps_r.len() != n || mu_r.len() != n {
            return Err(SceneError::Design(format!(
                "expected {n} pixels, got eps_r {} / mu_r {}",
                eps_r.len(),
                mu_r.len()
            )));
        }
        let x = Self {
            eps_r,
            mu_r,
            channels: scene.channels(),
        };
        x.check_bounds(scene)?;
        Ok(x)
    }

    /// Uniform random draw inside the box for every optimized channel.
    pub fn random<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Self {
        let mut x = Self::uniform(scene, 1.0);
        let b = scene.bounds();
        if x.channels.eps {
            for v in &mut x.eps_r {
                *v = b.eps.lo + (b.eps.hi - b.eps.lo) * rng.random::<f64>();
            }
        }
        if x.channels.mu {
            for v in &mut x.mu_r {
                *v = b.mu.lo + (b.mu.hi - b.mu.lo) * rng.random::<f64>();
            }
        }
        x
    }

    pub fn eps_r(&self) -> &[f64] {
        &self.eps_r
    }

    pub fn mu_r(&self) -> &[f64] {
        &self.mu_r
    }

    pub fn channels(&self) -> Channels {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.eps_r.len()
    }

    pub fn check_bounds(&self, scene: &Scene) -> Result<(), SceneError> {
        if self.eps_r.len() != scene.scatterers().len() {
            return Err(SceneError::Design(format!(
                "design has {} pixels, scene has {}",
                self.eps_r.len(),
                scene.scatterers().len()
            )));
        }
        let b = scene.bounds();
        let check = |name: &str, vals: &[f64], iv: Interval| -> Result<(), SceneError> {
            match vals.iter().position(|&v| !iv.contains(v)) {
                Some(p) => Err(SceneError::Design(format!(
                    "{name}[{p}] = {} outside [{}, {}]",
                    vals[p], iv.lo, iv.hi
                ))),
                None => Ok(()),
            }
        };
        if self.channels.eps {
            check("eps_r", &self.eps_r, b.eps)?;
        } else if self.eps_r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SceneError::Design("fixed eps_r must be positive".into()));
        }
        if self.channels.mu {
            check("mu_r", &self.mu_r, b.mu)?;
        } else if self.mu_r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(SceneError::Design("fixed mu_r must be positive".into()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.eps_r.len() * self.channels.count());
        if self.channels.eps {
            v.extend_from_slice(&self.eps_r);
        }
        if self.channels.mu {
            v.extend_from_slice(&self.mu_r);
        }
        v
    }

    /// Replaces the optimized channels with values from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, SceneError> {
        let n = self.eps_r.len();
        if flat.len() != n * self.channels.count() {
            return Err(SceneError::Design(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                n * self.channels.count()
            )));
        }
        let mut x = self.clone();
        let mut rest = flat;
        if x.channels.eps {
            x.eps_r.copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        if x.channels.mu {
            x.mu_r.copy_from_slice(&rest[..n]);
        }
        Ok(x)
    }

    /// Flat lower/upper bounds aligned with [`DesignVector::to_flat`].
    pub fn flat_bounds(scene: &Scene) -> (Vec<f64>, Vec<f64>) {
        let n = scene.scatterers().len();
        let (b, ch) = (scene.bounds(), scene.channels());
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        if ch.eps {
            lo.extend(std::iter::repeat_n(b.eps.lo, n));
            hi.extend(std::iter::repeat_n(b.eps.hi, n));
        }
        if ch.mu {
            lo.extend(std::iter::repeat_n(b.mu.lo, n));
            hi.extend(std::iter::repeat_n(b.mu.hi, n));
        }
        (lo, hi)
    }

    /// Channel and pixel of every flat variable.
    pub fn variables(scene: &Scene) -> Vec<(Channel, usize)> {
        let n = scene.scatterers().len();
        let ch = scene.channels();
        let mut v = Vec::new();
        if ch.eps {
            v.extend((0..n).map(|p| (Channel::Permittivity, p)));
        }
        if ch.mu {
            v.extend((0..n).map(|p| (Channel::Permeability, p)));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"
[grid]
nx = 16
ny = 16
cell_size = 0.005
pml_cells = 4

[frequencies]
hz = [3.0e9]

[regions]
transmitters = [{ cells = [[6, 6]] }]
imaging = [{ cell_rect = [9, 9, 10, 10] }]
scatterers = [{ cells = [[7, 7]] }]
"#
        .to_string()
    }

    #[test]
    fn minimal_scene_parses() {
        let s = parse_scene(&minimal()).unwrap();
        assert_eq!(s.transmitters().len(), 1);
        assert_eq!(s.imaging().len(), 4);
        assert_eq!(s.scatterers().len(), 1);
        assert_eq!(s.channels(), Channels::EPS);
        assert_eq!(s.bounds().eps, Interval::new(1.0, 10.0));
    }

    #[test]
    fn scatterer_in_pml_is_rejected() {
        let text = minimal().replace(
            "scatterers = [{ cells = [[7, 7]] }]",
            "scatterers = [{ cells = [[2, 7]] }]",
        );
        match parse_scene(&text) {
            Err(SceneError::RegionInPml { region, cells }) => {
                assert_eq!(region, "scatterers");
                assert_eq!(cells, vec![(2, 7)]);
            }
            other => panic!("expected region in PML, got {other:?}"),
        }
        let msg = parse_scene(&text).unwrap_err().to_string();
        assert!(msg.contains("region in PML"), "{msg}");
    }

    #[test]
    fn overlapping_regions_list_cells() {
        let text = minimal().replace("[[7, 7]]", "[[9, 9]]");
        match parse_scene(&text) {
            Err(SceneError::Overlap {
                first,
                second,
                cells,
            }) => {
                assert_eq!((first, second), ("imaging", "scatterers"));
                assert_eq!(cells, vec![(9, 9)]);
            }
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn tall_matrix_assumption_is_enforced() {
        let text = minimal().replace("hz = [3.0e9]", "hz = [3.0e9, 3.1e9, 3.2e9, 3.3e9]");
        let err = parse_scene(&text).unwrap_err();
        assert!(err.to_string().contains("M > KT"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let text = minimal().replace("ny = 16", "ny = = 16");
        match parse_scene(&text) {
            Err(SceneError::Syntax { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let text = minimal().replace("cell_size = 0.005", "cell_size = 0.02");
        let err = parse_scene(&text).unwrap_err();
        assert!(err.to_string().contains("lambda_min/8"), "{err}");
    }

    #[test]
    fn metamaterial_bounds_are_rejected() {
        let text = format!("{}\n[bounds]\neps = [0.5, 4.0]\n", minimal());
        let err = parse_scene(&text).unwrap_err();
        assert!(err.to_string().contains("x_L >= 1"), "{err}");
    }

    #[test]
    fn rect_in_meters_selects_cell_centers() {
        let text = minimal().replace(
            "imaging = [{ cell_rect = [9, 9, 10, 10] }]",
            "imaging = [{ rect = [0.045, 0.045, 0.055, 0.055] }]",
        );
        let s = parse_scene(&text).unwrap();
        let g = s.grid();
        let expected: Vec<usize> = vec![
            g.index(9, 9),
            g.index(10, 9),
            g.index(9, 10),
            g.index(10, 10),
        ];
        assert_eq!(s.imaging(), expected.as_slice());
    }

    #[test]
    fn presets_have_expected_configuration() {
        for (scene, has_pec) in [(preset_reflection(), true), (preset_transmission(), false)] {
            assert_eq!(scene.transmitters().len(), 3);
            assert_eq!(scene.frequencies().len(), 5);
            let expected = [3.1e9, 3.2e9, 3.3e9, 3.4e9, 3.5e9];
            for (f, e) in scene.frequencies().hz().iter().zip(expected) {
                assert!((f - e).abs() < 1e-3, "{f} vs {e}");
            }
            let omegas = scene.frequencies().omegas();
            assert!((omegas[4] - 2.0 * std::f64::consts::PI * 3.5e9).abs() < 1e-3);
            assert_eq!(scene.bounds().eps, Interval::new(1.0, 10.0));
            assert_eq!(scene.channels(), Channels::EPS);
            assert_eq!(!scene.pec().is_empty(), has_pec);
            assert!(scene.imaging().len() > scene.num_channels());
            let n = scene.scatterers().len();
            assert!((60..=200).contains(&n), "N = {n}");
            assert!(scene.scatterers().iter().all(|&c| !scene.is_pec(c)));
            // Desk-scale sampling: lambda_min / 12.
            let lambda_min = C0 / 3.5e9;
            assert!((scene.grid().cell_size - lambda_min / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn round_trip_reproduces_scene() {
        for scene in [
            preset_reflection(),
            preset_transmission(),
            parse_scene(&minimal()).unwrap(),
        ] {
            let again = parse_scene(&scene.to_scene_string()).unwrap();
            assert_eq!(again, scene);
        }
    }

    #[test]
    fn design_flat_round_trip_and_bounds() {
        let s = parse_scene(&minimal()).unwrap();
        let x = DesignVector::uniform(&s, 1.0);
        assert_eq!(x.to_flat(), vec![1.0]);
        let y = x.with_flat(&[4.0]).unwrap();
        assert_eq!(y.eps_r(), &[4.0]);
        assert!(x.with_flat(&[12.0]).unwrap().check_bounds(&s).is_err());
        assert!(DesignVector::new(&s, vec![1.0, 2.0], None).is_err());
        let (lo, hi) = DesignVector::flat_bounds(&s);
        assert_eq!((lo, hi), (vec![1.0], vec![10.0]));
    }
}
