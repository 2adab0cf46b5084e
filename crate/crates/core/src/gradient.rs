//! Analytic gradient of `ln det(GᴴG)`.
//!
//! With `F = GᴴG`:
//!
//! ```text
//! ∂/∂x_l ln det F = tr(F⁻¹ ∂F/∂x_l),   ∂F = ∂Gᴴ G + Gᴴ ∂G
//! ∂G_k/∂x_l = −Φ H_k⁻¹ (∂H_k/∂x_l) H_k⁻¹ Ψ
//! ```
//!
//! Every `∂H_k/∂x_l` is a short sum of rank-one terms `w · d dᵀ` supported
//! on the pixel (permittivity) or on the pixel and its four neighbors
//! (permeability). Per frequency we solve once against the `T` transmitter
//! sources (`A_k = H_k⁻¹Ψ`) and once against a unit vector at every
//! support cell (`B_k`, columns of `H_k⁻¹`), which is `K·(N+T)` solves for
//! permittivity-only designs. With `W = G F⁻¹` and `Q_k = W_kᴴ B_k`,
//!
//! ```text
//! tr(F⁻¹ ∂F) = −2 Re Σ_k Σ_terms w Σ_t (dᵀ A_k[:,t]) (Q_k[t,:] d)
//! ```
//!
//! so no derivative matrix is ever formed.

use std::collections::BTreeSet;

use faer::Mat;
use nalgebra::{Cholesky, DMatrix, Dyn};
use num_complex::Complex64 as C64;

use crate::constants::EPS0;
use crate::fdfd::{face_inv_mu, ForwardModel, HelmholtzSystem};
use crate::green::{concatenate, gramian_of, sample_rows, transmitter_block, GreensMatrix};
use crate::par;
use crate::scene::{Channel, DesignVector, Scene};
use crate::{Error, Result};

/// One rank-one piece `weight · d dᵀ` of an operator derivative; `support`
/// lists `(unknown, d_entry)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTerm {
    pub weight: C64,
    pub support: Vec<(usize, f64)>,
}

/// Sparse `∂H/∂x_l` as a sum of rank-one terms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocalDerivative {
    pub terms: Vec<DerivativeTerm>,
}

impl LocalDerivative {
    /// Explicit `(row, col, value)` entries, duplicates summed, sorted.
    pub fn to_triplets(&self) -> Vec<(usize, usize, C64)> {
        let mut map = std::collections::BTreeMap::<(usize, usize), C64>::new();
        for term in &self.terms {
            for &(r, dr) in &term.support {
                for &(c, dc) in &term.support {
                    *map.entry((r, c)).or_default() += term.weight * (dr * dc);
                }
            }
        }
        map.into_iter()
            .filter(|(_, v)| *v != C64::new(0.0, 0.0))
            .map(|((r, c), v)| (r, c, v))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.to_triplets().len()
    }
}

fn pixel_cell(scene: &Scene, pixel: usize) -> Result<usize> {
    scene.scatterers().get(pixel).copied().ok_or_else(|| {
        Error::InvalidInput(format!(
            "scatterer index {pixel} out of range (N = {})",
            scene.scatterers().len()
        ))
    })
}

/// `∂H/∂ε_r` at scatterer pixel `pixel`: `ω² ε0` on the pixel's diagonal
/// entry (times the unit PML stretch, since pixels are interior).
pub fn dh_deps(scene: &Scene, system: &HelmholtzSystem, pixel: usize) -> Result<LocalDerivative> {
    let cell = pixel_cell(scene, pixel)?;
    let u = system
        .layout()
        .unknown(cell)
        .expect("scatterer pixels are never PEC");
    let w = system.omega() * system.omega() * EPS0;
    Ok(LocalDerivative {
        terms: vec![DerivativeTerm {
            weight: system.cell_stretch(u) * w,
            support: vec![(u, 1.0)],
        }],
    })
}

/// `∂H/∂μ_r` at scatterer pixel `pixel`: one `L dᵀ`-shaped term per face of
/// the pixel, from differentiating the face-averaged `1/μ_r`.
pub fn dh_dmu(scene: &Scene, system: &HelmholtzSystem, pixel: usize) -> Result<LocalDerivative> {
    if !scene.channels().mu {
        return Err(Error::InvalidInput(
            "permeability channel is disabled".into(),
        ));
    }
    let cell = pixel_cell(scene, pixel)?;
    let layout = system.layout();
    let mu_j = system.mu_r(cell);
    let mut terms = Vec::with_capacity(4);
    for face in layout.faces_of_cell(cell) {
        let (ca, cb) = layout.face_cells(face);
        let other = if ca == Some(cell) { cb } else { ca };
        // d(c_f)/dμ_j for the face-averaged inverse permeability.
        let dinv = match other {
            Some(o) => {
                let s = mu_j + system.mu_r(o);
                -2.0 / (s * s)
            }
            None => -1.0 / (mu_j * mu_j),
        };
        debug_assert!(face_inv_mu(Some(mu_j), other.map(|o| system.mu_r(o))) > 0.0);
        let (ua, ub) = layout.face_unknowns(face);
        let mut support = Vec::with_capacity(2);
        if let Some(a) = ua {
            support.push((a, 1.0));
        }
        if let Some(b) = ub {
            support.push((b, -1.0));
        }
        // H = −Σ c_f d dᵀ + diag(...), so ∂H = −(∂c_f) d dᵀ.
        terms.push(DerivativeTerm {
            weight: -(system.face_geometry(face) * dinv),
            support,
        });
    }
    Ok(LocalDerivative { terms })
}

fn derivative(
    scene: &Scene,
    system: &HelmholtzSystem,
    var: (Channel, usize),
) -> Result<LocalDerivative> {
    match var.0 {
        Channel::Permittivity => dh_deps(scene, system, var.1),
        Channel::Permeability => dh_dmu(scene, system, var.1),
    }
}

/// `ln det F` and the Cholesky factor of a Hermitian positive definite
/// Gramian, retrying once with a `1e-14·tr(F)` diagonal jitter.
pub fn logdet_cholesky(f: &DMatrix<C64>) -> Result<(f64, Cholesky<C64, Dyn>)> {
    let chol = Cholesky::new(f.clone()).or_else(|| {
        let tr: f64 = (0..f.nrows()).map(|i| f[(i, i)].re).sum();
        let mut g = f.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += C64::new(1e-14 * tr, 0.0);
        }
        Cholesky::new(g)
    });
    let Some(chol) = chol else {
        return Err(Error::RankDeficient { ratio: 0.0 });
    };
    let diag: Vec<f64> = (0..f.nrows()).map(|i| chol.l_dirty()[(i, i)].re).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
        (lo.min(d), hi.max(d))
    });
    if !(lo > 0.0) || lo < crate::capacity::RANK_TOLERANCE * hi {
        return Err(Error::RankDeficient { ratio: lo / hi });
    }
    let logdet = diag.iter().map(|d| 2.0 * d.ln()).sum();
    Ok((logdet, chol))
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    /// `ln det(GᴴG)` in nats.
    pub objective: f64,
    /// `∂ objective / ∂x` aligned with [`DesignVector::to_flat`].
    pub gradient: Vec<f64>,
    /// Contribution of each frequency; sums to `gradient`.
    pub per_frequency: Vec<Vec<f64>>,
    /// Forward solves performed.
    pub solves: usize,
    pub green: GreensMatrix,
}

struct FrequencyBlocks {
    green: DMatrix<C64>,
    /// `A_k` at the adjoint cells, `P × T`.
    forward: DMatrix<C64>,
    /// `B_k` at the imaging cells, `M × P`.
    adjoint: DMatrix<C64>,
    derivatives: Vec<LocalDerivative>,
    solves: usize,
}

impl ForwardModel {
    /// Unknowns touched by any design-variable derivative, sorted.
    fn adjoint_unknowns(&self) -> Vec<usize> {
        let scene = self.scene();
        let layout = self.layout();
        let mut set = BTreeSet::new();
        for &cell in scene.scatterers() {
            if scene.channels().eps {
                set.extend(layout.unknown(cell));
            }
            if scene.channels().mu {
                set.extend(layout.unknown(cell));
                for face in layout.faces_of_cell(cell) {
                    let (a, b) = layout.face_unknowns(face);
                    set.extend(a);
                    set.extend(b);
                }
            }
        }
        set.into_iter().collect()
    }

    /// `ln det(G(x)ᴴ G(x))` using `K·T` solves.
    pub fn objective(&self, x: &DesignVector) -> Result<f64> {
        let g = self.green(x)?;
        Ok(logdet_cholesky(&gramian_of(g.data()))?.0)
    }

    /// Objective and gradient using `K·(P+T)` solves, where `P` is the
    /// number of cells supporting the operator derivatives (`P = N` for
    /// permittivity-only designs).
    pub fn grad_logdet(&self, x: &DesignVector) -> Result<GradientResult> {
        let scene = self.scene();
        let layout = self.layout();
        let omegas = scene.frequencies().omegas();
        let t = scene.transmitters().len();
        let vars = DesignVector::variables(scene);

        let adjoint = self.adjoint_unknowns();
        let position: std::collections::HashMap<usize, usize> =
            adjoint.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        let psi = transmitter_block(self)?;
        let n = layout.num_unknowns();
        let rhs = Mat::<C64>::from_fn(n, t + adjoint.len(), |i, j| {
            if j < t {
                psi[(i, j)]
            } else if adjoint[j - t] == i {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });

        let blocks = par::try_map(&omegas, |&omega| {
            let sys = self.assemble(x, omega)?;
            let solved = sys.solve_block(&rhs)?;
            let green = sample_rows(self, &solved, 0..t);
            let forward = DMatrix::from_fn(adjoint.len(), t, |p, c| solved[(adjoint[p], c)]);
            let adj = sample_rows(self, &solved, t..t + adjoint.len());
            let derivatives = vars
                .iter()
                .map(|&v| {
                    let mut d = derivative(scene, &sys, v)?;
                    for term in &mut d.terms {
                        for entry in &mut term.support {
                            entry.0 = position[&entry.0];
                        }
                    }
                    Ok(d)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok::<_, Error>(FrequencyBlocks {
                green,
                forward,
                adjoint: adj,
                derivatives,
                solves: sys.solve_count(),
            })
        })?;

        let green = concatenate(
            scene,
            x,
            &blocks.iter().map(|b| b.green.clone()).collect::<Vec<_>>(),
        )?;
        let f = gramian_of(green.data());
        let (objective, chol) = logdet_cholesky(&f)?;
        let w = green.data() * chol.inverse();
        let q: Vec<DMatrix<C64>> = blocks
            .iter()
            .enumerate()
            .map(|(k, b)| w.columns(k * t, t).adjoint() * &b.adjoint)
            .collect();

        let per_var = par::map_range(vars.len(), |l| {
            blocks
                .iter()
                .zip(&q)
                .map(|(b, qk)| {
                    let mut s = C64::new(0.0, 0.0);
                    for term in &b.derivatives[l].terms {
                        let mut acc = C64::new(0.0, 0.0);
                        for tt in 0..t {
                            let da: C64 = term
                                .support
                                .iter()
                                .map(|&(p, d)| b.forward[(p, tt)] * d)
                                .sum();
                            let dq: C64 = term.support.iter().map(|&(p, d)| qk[(tt, p)] * d).sum();
                            acc += da * dq;
                        }
                        s -= term.weight * acc;
                    }
                    2.0 * s.re
                })
                .collect::<Vec<f64>>()
        });

        let per_frequency: Vec<Vec<f64>> = (0..omegas.len())
            .map(|k| per_var.iter().map(|v| v[k]).collect())
            .collect();
        let gradient = per_var.iter().map(|v| v.iter().sum()).collect();
        Ok(GradientResult {
            objective,
            gradient,
            per_frequency,
            solves: blocks.iter().map(|b| b.solves).sum(),
            green,
        })
    }
}

/// Objective and analytic gradient for a scene and design.
pub fn grad_logdet(scene: &Scene, x: &DesignVector) -> Result<GradientResult> {
    ForwardModel::new(scene)?.grad_logdet(x)
}
