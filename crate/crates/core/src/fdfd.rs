//! 2D TMz finite-difference frequency-domain forward model.
//!
//! For a frequency `ω` the operator is
//!
//! ```text
//! H u = ∂x( s_y/(s_x μ) ∂x u ) + ∂y( s_x/(s_y μ) ∂y u ) + ω² ε s_x s_y u
//! ```
//!
//! with `μ = μ0 μ_r`, `ε = ε0 ε_r` and complex PML stretch factors
//! `s = 1 − jσ/(ωε0)` (time convention `exp(+jωt)`). A five-point stencil
//! puts `1/μ` on cell faces as the harmonic mean of the two adjacent
//! `1/μ_r` values, so the assembled matrix is
//!
//! ```text
//! H = −Σ_f c_f d_f d_fᵀ + diag(ω² ε0 ε_r s_x s_y)
//! ```
//!
//! where `d_f` is the first difference across face `f`. `H` is complex
//! symmetric, which the gradient relies on for reciprocity.
//!
//! PEC cells are Dirichlet: they are removed from the unknowns and the field
//! is pinned to zero there. The grid boundary behind the PML is also
//! Dirichlet.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{Argsort, Pair, SparseColMat, SymbolicSparseColMat};
use faer::{Conj, Mat};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{wavenumber, EPS0, MU0};
use crate::par;
use crate::scene::{DesignVector, GridSpec, Scene};
use crate::Result;

/// Polynomial grading order of the PML conductivity.
pub const PML_ORDER: f64 = 3.0;
/// Theoretical normal-incidence reflection of the PML.
pub const PML_REFLECTION: f64 = 1e-6;

const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("factorization failed at omega = {omega:.6e} rad/s: {detail}")]
    Singular { omega: f64, detail: String },

    #[error("rhs has {got} rows, system has {expected} unknowns")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid source cell ({ix}, {iy}): {reason}")]
    InvalidSource {
        ix: usize,
        iy: usize,
        reason: &'static str,
    },

    #[error("solution is not finite at omega = {omega:.6e} rad/s")]
    NonFinite { omega: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

/// A cell face. `a` is the cell on the low side, `b` the high side; either
/// may be outside the grid.
#[derive(Debug, Clone, Copy)]
struct Face {
    axis: Axis,
    cell_a: Option<usize>,
    cell_b: Option<usize>,
    /// Face position along `axis`, meters.
    normal: f64,
    /// Cell-center position along the other axis, meters.
    transverse: f64,
}

/// Scene-dependent, design- and frequency-independent part of the
/// discretization: unknown numbering, face list and the symbolic sparse
/// factorization, all reused across every assembly.
pub struct Layout {
    grid: GridSpec,
    unknown_of_cell: Vec<usize>,
    cell_of_unknown: Vec<usize>,
    faces: Vec<Face>,
    /// Faces with unknowns on both sides, in off-diagonal pattern order.
    coupling_faces: Vec<usize>,
    symbolic: SymbolicSparseColMat<usize>,
    argsort: Argsort<usize>,
    symbolic_lu: SymbolicLu<usize>,
}

impl std::fmt::Debug for Layout {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Layout")
            .field("grid", &self.grid)
            .field("unknowns", &self.cell_of_unknown.len())
            .field("faces", &self.faces.len())
            .finish()
    }
}

impl Layout {
    fn new(scene: &Scene) -> Result<Self> {
        let grid = *scene.grid();
        let (nx, ny, h) = (grid.nx, grid.ny, grid.cell_size);

        let mut unknown_of_cell = vec![NONE; grid.num_cells()];
        let mut cell_of_unknown = Vec::with_capacity(grid.num_cells());
        for (cell, u) in unknown_of_cell.iter_mut().enumerate() {
            if !scene.is_pec(cell) {
                *u = cell_of_unknown.len();
                cell_of_unknown.push(cell);
            }
        }

        // x-faces first (ny rows of nx+1), then y-faces (ny+1 rows of nx).
        let mut faces = Vec::with_capacity(ny * (nx + 1) + nx * (ny + 1));
        for iy in 0..ny {
            for fx in 0..=nx {
                faces.push(Face {
                    axis: Axis::X,
                    cell_a: (fx > 0).then(|| grid.index(fx - 1, iy)),
                    cell_b: (fx < nx).then(|| grid.index(fx, iy)),
                    normal: fx as f64 * h,
                    transverse: (iy as f64 + 0.5) * h,
                });
            }
        }
        for fy in 0..=ny {
            for ix in 0..nx {
                faces.push(Face {
                    axis: Axis::Y,
                    cell_a: (fy > 0).then(|| grid.index(ix, fy - 1)),
                    cell_b: (fy < ny).then(|| grid.index(ix, fy)),
                    normal: fy as f64 * h,
                    transverse: (ix as f64 + 0.5) * h,
                });
            }
        }

        let unknown = |c: Option<usize>| c.map(|c| unknown_of_cell[c]).filter(|&u| u != NONE);
        let n = cell_of_unknown.len();
        let mut pairs: Vec<Pair<usize, usize>> = (0..n).map(|u| Pair::new(u, u)).collect();
        let mut coupling_faces = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            if let (Some(a), Some(b)) = (unknown(f.cell_a), unknown(f.cell_b)) {
                pairs.push(Pair::new(a, b));
                pairs.push(Pair::new(b, a));
                coupling_faces.push(fi);
            }
        }
        let (symbolic, argsort) = SymbolicSparseColMat::try_new_from_indices(n, n, &pairs)
            .map_err(|e| SolverError::Singular {
                omega: 0.0,
                detail: format!("sparsity pattern: {e:?}"),
            })?;
        let symbolic_lu =
            SymbolicLu::try_new(symbolic.as_ref()).map_err(|e| SolverError::Singular {
                omega: 0.0,
                detail: format!("symbolic LU: {e:?}"),
            })?;

        Ok(Self {
            grid,
            unknown_of_cell,
            cell_of_unknown,
            faces,
            coupling_faces,
            symbolic,
            argsort,
            symbolic_lu,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn num_unknowns(&self) -> usize {
        self.cell_of_unknown.len()
    }

    /// Unknown index of a cell; `None` for PEC cells.
    pub fn unknown(&self, cell: usize) -> Option<usize> {
        self.unknown_of_cell
            .get(cell)
            .copied()
            .filter(|&u| u != NONE)
    }

    pub fn cell(&self, unknown: usize) -> usize {
        self.cell_of_unknown[unknown]
    }

    /// Face ids around a cell, in the order x−, x+, y−, y+.
    pub(crate) fn faces_of_cell(&self, cell: usize) -> [usize; 4] {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (ix, iy) = self.grid.coords(cell);
        let y0 = ny * (nx + 1);
        [
            iy * (nx + 1) + ix,
            iy * (nx + 1) + ix + 1,
            y0 + iy * nx + ix,
            y0 + (iy + 1) * nx + ix,
        ]
    }

    /// Unknowns on the low and high side of a face.
    pub(crate) fn face_unknowns(&self, face: usize) -> (Option<usize>, Option<usize>) {
        let f = &self.faces[face];
        (
            f.cell_a.and_then(|c| self.unknown(c)),
            f.cell_b.and_then(|c| self.unknown(c)),
        )
    }

    pub(crate) fn face_cells(&self, face: usize) -> (Option<usize>, Option<usize>) {
        let f = &self.faces[face];
        (f.cell_a, f.cell_b)
    }

    /// Row/column of every stored matrix value, in storage order.
    pub fn pattern(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = (0..self.num_unknowns()).map(|u| (u, u)).collect();
        for &fi in &self.coupling_faces {
            let (a, b) = self.face_unknowns(fi);
            let (a, b) = (a.expect("coupling"), b.expect("coupling"));
            out.push((a, b));
            out.push((b, a));
        }
        out
    }

    /// PML stretch factor at coordinate `x` along an axis with `cells` cells.
    fn stretch(&self, x: f64, cells: usize, omega: f64) -> C64 {
        let h = self.grid.cell_size;
        let depth = self.grid.pml_thickness as f64 * h;
        let extent = cells as f64 * h;
        let d = if x < depth {
            depth - x
        } else if x > extent - depth {
            x - (extent - depth)
        } else {
            return C64::new(1.0, 0.0);
        };
        let k0 = wavenumber(omega);
        let strength = (PML_ORDER + 1.0) * (1.0 / PML_REFLECTION).ln() / (2.0 * k0 * depth);
        C64::new(1.0, -strength * (d / depth).powf(PML_ORDER))
    }

    fn cell_stretch(&self, cell: usize, omega: f64) -> C64 {
        let (x, y) = self.grid.center(cell);
        self.stretch(x, self.grid.nx, omega) * self.stretch(y, self.grid.ny, omega)
    }

    /// `s_⊥/s_∥ / (μ0 h²)`: face coefficient before the `1/μ_r` average.
    fn face_geometry(&self, face: usize, omega: f64) -> C64 {
        let f = &self.faces[face];
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let (s_normal, s_trans) = match f.axis {
            Axis::X => (
                self.stretch(f.normal, nx, omega),
                self.stretch(f.transverse, ny, omega),
            ),
            Axis::Y => (
                self.stretch(f.normal, ny, omega),
                self.stretch(f.transverse, nx, omega),
            ),
        };
        s_trans / s_normal / (MU0 * self.grid.cell_area())
    }
}

/// Averaged `1/μ_r` across a face; a missing neighbor is a ghost copy of
/// the present one.
pub(crate) fn face_inv_mu(mu_a: Option<f64>, mu_b: Option<f64>) -> f64 {
    match (mu_a, mu_b) {
        (Some(a), Some(b)) => 2.0 / (a + b),
        (Some(a), None) | (None, Some(a)) => 1.0 / a,
        (None, None) => 0.0,
    }
}

/// A scene bound to its reusable discretization layout.
#[derive(Debug, Clone)]
pub struct ForwardModel {
    scene: Scene,
    layout: Arc<Layout>,
}

impl ForwardModel {
    pub fn new(scene: &Scene) -> Result<Self> {
        // Parallelism lives at the frequency / column level; keeping faer
        // single-threaded makes every solve bitwise reproducible.
        faer::set_global_parallelism(faer::Par::Seq);
        Ok(Self {
            scene: scene.clone(),
            layout: Arc::new(Layout::new(scene)?),
        })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Per-cell relative media for a design.
    fn media(&self, x: &DesignVector) -> Result<(Vec<f64>, Vec<f64>)> {
        x.check_bounds(&self.scene)?;
        let n = self.scene.grid().num_cells();
        let mut eps = vec![self.scene.background_eps_r(); n];
        let mut mu = vec![self.scene.background_mu_r(); n];
        for (p, &cell) in self.scene.scatterers().iter().enumerate() {
            eps[cell] = x.eps_r()[p];
            mu[cell] = x.mu_r()[p];
        }
        Ok((eps, mu))
    }

    /// Assembles and factorizes `H(x)` at angular frequency `omega`.
    pub fn assemble(&self, x: &DesignVector, omega: f64) -> Result<HelmholtzSystem> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(crate::Error::InvalidInput(format!("omega = {omega}")));
        }
        let (eps_r, mu_r) = self.media(x)?;
        let layout = &self.layout;
        let n = layout.num_unknowns();

        let cell_stretch: Vec<C64> = (0..n)
            .map(|u| layout.cell_stretch(layout.cell(u), omega))
            .collect();
        let mut diag: Vec<C64> = (0..n)
            .map(|u| cell_stretch[u] * (omega * omega * EPS0 * eps_r[layout.cell(u)]))
            .collect();

        let mut face_coeff = vec![C64::new(0.0, 0.0); layout.faces.len()];
        let mut face_geom = vec![C64::new(0.0, 0.0); layout.faces.len()];
        for (fi, f) in layout.faces.iter().enumerate() {
            let (ua, ub) = layout.face_unknowns(fi);
            if ua.is_none() && ub.is_none() {
                continue;
            }
            let geom = layout.face_geometry(fi, omega);
            let c = geom * face_inv_mu(f.cell_a.map(|c| mu_r[c]), f.cell_b.map(|c| mu_r[c]));
            face_geom[fi] = geom;
            face_coeff[fi] = c;
            for u in [ua, ub].into_iter().flatten() {
                diag[u] -= c;
            }
        }

        let mut values = diag;
        values.reserve(2 * layout.coupling_faces.len());
        for &fi in &layout.coupling_faces {
            values.push(face_coeff[fi]);
            values.push(face_coeff[fi]);
        }

        let matrix =
            SparseColMat::new_from_argsort(layout.symbolic.clone(), &layout.argsort, &values)
                .map_err(|e| SolverError::Singular {
                    omega,
                    detail: format!("matrix construction: {e:?}"),
                })?;
        let lu = Lu::try_new_with_symbolic(layout.symbolic_lu.clone(), matrix.as_ref()).map_err(
            |e| SolverError::Singular {
                omega,
                detail: format!("{e:?}"),
            },
        )?;

        Ok(HelmholtzSystem {
            omega,
            layout: Arc::clone(&self.layout),
            eps_r,
            mu_r,
            cell_stretch,
            face_geom,
            values,
            matrix,
            lu,
            solves: AtomicUsize::new(0),
        })
    }

    /// Unit-strength line source at `cell`: `e_cell / h²`, so the discrete
    /// solution approximates the continuum Green's function.
    pub fn point_source_rhs(&self, cell: usize) -> Result<Vec<C64>> {
        let grid = self.scene.grid();
        let (ix, iy) = if cell < grid.num_cells() {
            grid.coords(cell)
        } else {
            (cell % grid.nx, cell / grid.nx)
        };
        if !grid.in_interior(cell) {
            return Err(SolverError::InvalidSource {
                ix,
                iy,
                reason: "cell is in the PML or outside the grid",
            }
            .into());
        }
        let u = self
            .layout
            .unknown(cell)
            .ok_or(SolverError::InvalidSource {
                ix,
                iy,
                reason: "cell is PEC",
            })?;
        let mut rhs = vec![C64::new(0.0, 0.0); self.layout.num_unknowns()];
        rhs[u] = C64::new(1.0 / grid.cell_area(), 0.0);
        Ok(rhs)
    }
}

/// Convenience wrapper building a fresh [`ForwardModel`].
pub fn assemble(scene: &Scene, x: &DesignVector, omega: f64) -> Result<HelmholtzSystem> {
    ForwardModel::new(scene)?.assemble(x, omega)
}

/// Assembled and factorized `H_k(x)` for one frequency.
///
/// Immutable after assembly; solves only bump an atomic counter, so the
/// system can be shared across threads.
pub struct HelmholtzSystem {
    omega: f64,
    layout: Arc<Layout>,
    eps_r: Vec<f64>,
    mu_r: Vec<f64>,
    cell_stretch: Vec<C64>,
    face_geom: Vec<C64>,
    values: Vec<C64>,
    matrix: SparseColMat<usize, C64>,
    lu: Lu<usize, C64>,
    solves: AtomicUsize,
}

impl std::fmt::Debug for HelmholtzSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HelmholtzSystem")
            .field("omega", &self.omega)
            .field("unknowns", &self.layout.num_unknowns())
            .field("nnz", &self.values.len())
            .finish()
    }
}

impl HelmholtzSystem {
    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_unknowns(&self) -> usize {
        self.layout.num_unknowns()
    }

    /// Matrix values aligned with [`Layout::pattern`].
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    /// Number of right-hand sides solved so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub(crate) fn mu_r(&self, cell: usize) -> f64 {
        self.mu_r[cell]
    }

    /// Relative permittivity of every grid cell.
    pub fn eps_r(&self) -> &[f64] {
        &self.eps_r
    }

    /// `s_x s_y` at an unknown.
    pub(crate) fn cell_stretch(&self, unknown: usize) -> C64 {
        self.cell_stretch[unknown]
    }

    /// Face coefficient before the `1/μ_r` average.
    pub(crate) fn face_geometry(&self, face: usize) -> C64 {
        self.face_geom[face]
    }

    /// `H·u` for a vector in unknown space.
    pub fn apply(&self, u: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); u.len()];
        for ((r, c), v) in self.layout.pattern().into_iter().zip(&self.values) {
            out[r] += v * u[c];
        }
        out
    }

    /// Solves `H U = B` for a block of right-hand sides in unknown space.
    ///
    /// Columns are split across worker threads; each chunk reuses the cached
    /// factorization.
    pub fn solve_block(&self, rhs: &Mat<C64>) -> Result<Mat<C64>> {
        let n = self.num_unknowns();
        if rhs.nrows() != n {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                got: rhs.nrows(),
            }
            .into());
        }
        let r = rhs.ncols();
        if r == 0 {
            return Ok(Mat::zeros(n, 0));
        }
        let chunks = par::num_threads().clamp(1, r);
        let width = r.div_ceil(chunks);
        let starts: Vec<usize> = (0..r).step_by(width).collect();
        let solved = par::map(&starts, |&c0| {
            let c1 = (c0 + width).min(r);
            let mut block = rhs.subcols(c0, c1 - c0).to_owned();
            self.lu.solve_in_place_with_conj(Conj::No, block.as_mut());
            block
        });
        self.solves.fetch_add(r, Ordering::Relaxed);

        let mut out = Mat::<C64>::zeros(n, r);
        for (&c0, block) in starts.iter().zip(&solved) {
            for j in 0..block.ncols() {
                for i in 0..n {
                    out[(i, c0 + j)] = block[(i, j)];
                }
            }
        }
        if (0..r).any(|j| (0..n).any(|i| !out[(i, j)].is_finite())) {
            return Err(SolverError::NonFinite { omega: self.omega }.into());
        }
        Ok(out)
    }

    /// Solves each right-hand side and scatters the result onto the grid.
    pub fn solve_multi(&self, rhs: &[Vec<C64>]) -> Result<Vec<FieldMap>> {
        let n = self.num_unknowns();
        if let Some(bad) = rhs.iter().find(|b| b.len() != n) {
            return Err(SolverError::DimensionMismatch {
                expected: n,
                got: bad.len(),
            }
            .into());
        }
        let block = Mat::from_fn(n, rhs.len(), |i, j| rhs[j][i]);
        let solved = self.solve_block(&block)?;
        Ok(rhs
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let nonzero: Vec<usize> = (0..n).filter(|&i| b[i] != C64::new(0.0, 0.0)).collect();
                let source = match nonzero.as_slice() {
                    [u] => SourceDescriptor::PointSource {
                        cell: self.layout.cell(*u),
                    },
                    _ => SourceDescriptor::Custom { column: j },
                };
                let values: Vec<C64> = (0..n).map(|i| solved[(i, j)]).collect();
                self.field_map(&values, source)
            })
            .collect())
    }

    /// Scatters an unknown-space vector onto the grid (zero on PEC).
    pub fn field_map(&self, unknowns: &[C64], source: SourceDescriptor) -> FieldMap {
        let grid = *self.layout.grid();
        let mut values = vec![C64::new(0.0, 0.0); grid.num_cells()];
        for (u, v) in unknowns.iter().enumerate() {
            values[self.layout.cell(u)] = *v;
        }
        FieldMap {
            grid,
            omega: self.omega,
            source,
            values,
        }
    }

    /// Dense copy of the operator; test-sized systems only.
    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        let n = self.num_unknowns();
        let mut m = vec![vec![C64::new(0.0, 0.0); n]; n];
        for ((r, c), v) in self.layout.pattern().into_iter().zip(&self.values) {
            m[r][c] += *v;
        }
        m
    }

    #[allow(dead_code)]
    pub(crate) fn matrix(&self) -> &SparseColMat<usize, C64> {
        &self.matrix
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SourceDescriptor {
    PointSource { cell: usize },
    Custom { column: usize },
}

/// Complex field on every grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMap {
    pub grid: GridSpec,
    pub omega: f64,
    pub source: SourceDescriptor,
    pub values: Vec<C64>,
}

impl FieldMap {
    pub fn at(&self, cell: usize) -> C64 {
        self.values[cell]
    }

    /// Mean circular variance `1 − |⟨exp(jφ)⟩|` of the field phase over
    /// rings of one-cell width centered on `center`, restricted to `cells`
    /// and weighted by ring population. Zero for a perfectly concentric
    /// phase front; rings with fewer than `min_ring` cells are skipped.
    pub fn ring_phase_variance(&self, center: usize, cells: &[usize], min_ring: usize) -> f64 {
        let h = self.grid.cell_size;
        let mut rings: std::collections::BTreeMap<usize, (C64, usize)> = Default::default();
        for &c in cells {
            let v = self.values[c];
            if v.norm() == 0.0 {
                continue;
            }
            let r = (self.grid.distance(center, c) / h).round() as usize;
            let e = rings.entry(r).or_insert((C64::new(0.0, 0.0), 0));
            e.0 += v / v.norm();
            e.1 += 1;
        }
        let (mut acc, mut total) = (0.0, 0usize);
        for (sum, count) in rings.values() {
            if *count < min_ring.max(1) {
                continue;
            }
            acc += (1.0 - sum.norm() / *count as f64) * *count as f64;
            total += count;
        }
        if total == 0 {
            0.0
        } else {
            acc / total as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{parse_scene, Channels};

    pub(crate) fn small_scene(pec: bool) -> Scene {
        let pec_line = if pec {
            "pec = [{ cells = [[9, 12], [10, 12]] }]"
        } else {
            ""
        };
        parse_scene(&format!(
            r#"
[grid]
nx = 20
ny = 20
cell_size = 0.006
pml_cells = 5

[frequencies]
hz = [3.0e9, 3.4e9]

[regions]
transmitters = [{{ cells = [[7, 7], [12, 7]] }}]
imaging = [{{ cell_rect = [7, 13, 12, 14] }}]
scatterers = [{{ cell_rect = [8, 10, 11, 10] }}]
{pec_line}

[bounds]
eps = [1.0, 6.0]
mu = [1.0, 3.0]
optimize = ["eps", "mu"]
"#
        ))
        .unwrap()
    }

    fn design(scene: &Scene) -> DesignVector {
        let n = scene.scatterers().len();
        let eps: Vec<f64> = (0..n).map(|i| 1.5 + 0.7 * i as f64).collect();
        let mu: Vec<f64> = (0..n).map(|i| 1.0 + 0.3 * i as f64).collect();
        DesignVector::new(scene, eps, Some(mu)).unwrap()
    }

    #[test]
    fn operator_is_complex_symmetric() {
        let scene = small_scene(true);
        assert_eq!(scene.channels(), Channels::BOTH);
        let sys = assemble(&scene, &design(&scene), 2.0e10).unwrap();
        let m = sys.to_dense();
        for (i, row) in m.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, m[j][i], "({i},{j})");
            }
        }
    }

    #[test]
    fn pec_cells_have_zero_field() {
        let scene = small_scene(true);
        let model = ForwardModel::new(&scene).unwrap();
        let sys = model.assemble(&design(&scene), 2.0e10).unwrap();
        let rhs = model.point_source_rhs(scene.transmitters()[0]).unwrap();
        let field = &sys.solve_multi(&[rhs]).unwrap()[0];
        for &c in scene.pec() {
            assert_eq!(field.at(c), C64::new(0.0, 0.0));
        }
        assert!(field.values.iter().any(|v| v.norm() > 0.0));
    }

    #[test]
    fn residual_below_tolerance() {
        let scene = small_scene(true);
        let model = ForwardModel::new(&scene).unwrap();
        let sys = model.assemble(&design(&scene), 2.1e10).unwrap();
        let n = sys.num_unknowns();
        let b: Vec<C64> = (0..n)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let u = sys.solve_block(&Mat::from_fn(n, 1, |i, _| b[i])).unwrap();
        let u: Vec<C64> = (0..n).map(|i| u[(i, 0)]).collect();
        let hu = sys.apply(&u);
        let num: f64 = hu
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den <= 1e-10, "residual {}", num / den);
    }

    #[test]
    fn zero_rhs_gives_zero_field() {
        let scene = small_scene(false);
        let model = ForwardModel::new(&scene).unwrap();
        let sys = model
            .assemble(&DesignVector::uniform(&scene, 1.0), 2.0e10)
            .unwrap();
        let fields = sys
            .solve_multi(&[vec![C64::new(0.0, 0.0); sys.num_unknowns()]])
            .unwrap();
        assert!(fields[0].values.iter().all(|v| *v == C64::new(0.0, 0.0)));
        assert_eq!(sys.solve_count(), 1);
    }

    #[test]
    fn point_source_rhs_contract() {
        let scene = small_scene(true);
        let model = ForwardModel::new(&scene).unwrap();
        let a = model.point_source_rhs(scene.transmitters()[0]).unwrap();
        let b = model.point_source_rhs(scene.transmitters()[1]).unwrap();
        assert_eq!(a.iter().filter(|v| v.norm() > 0.0).count(), 1);
        let dot: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        assert_eq!(dot, C64::new(0.0, 0.0));
        let h2 = scene.grid().cell_area();
        assert!((a.iter().map(|v| v.re).sum::<f64>() - 1.0 / h2).abs() < 1e-6 / h2);
        assert!(model.point_source_rhs(scene.pec()[0]).is_err());
        assert!(model.point_source_rhs(0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let scene = small_scene(false);
        let sys = assemble(&scene, &DesignVector::uniform(&scene, 1.0), 2.0e10).unwrap();
        let err = sys.solve_multi(&[vec![C64::new(1.0, 0.0); 3]]).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Solver(SolverError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn out_of_bounds_design_is_rejected() {
        let scene = small_scene(false);
        let x = DesignVector::uniform(&scene, 1.0)
            .with_flat(&vec![7.0; scene.num_variables()])
            .unwrap();
        assert!(assemble(&scene, &x, 2.0e10).is_err());
    }

    #[test]
    fn concentric_phase_has_zero_ring_variance() {
        let grid = GridSpec {
            nx: 31,
            ny: 31,
            cell_size: 1.0,
            pml_thickness: 4,
        };
        let center = grid.index(15, 15);
        let values: Vec<C64> = (0..grid.num_cells())
            .map(|c| {
                let r = (grid.distance(center, c)).round();
                C64::from_polar(1.0, -1.3 * r)
            })
            .collect();
        let cells: Vec<usize> = (0..grid.num_cells()).filter(|&c| c != center).collect();
        let f = FieldMap {
            grid,
            omega: 1.0,
            source: SourceDescriptor::PointSource { cell: center },
            values,
        };
        assert!(f.ring_phase_variance(center, &cells, 4) < 1e-12);
    }
}
