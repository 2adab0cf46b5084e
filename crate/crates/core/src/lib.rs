//! Sensing-capacity maximization for compressive antennas.
//!
//! The pipeline is:
//!
//! 1. [`scene`] describes the 2D geometry: grid, PML, transmitters, the
//!    imaging region, the scatterer pixels being designed, and PEC cells.
//! 2. [`fdfd`] assembles and factorizes the TMz Helmholtz operator
//!    `H_k(x)` for every frequency and solves it against point sources.
//! 3. [`green`] samples those solutions into the multi-frequency sensing
//!    matrix `G(x) = [G_1(x), ..., G_K(x)]`, one column per
//!    (frequency, transmitter) pair.
//! 4. [`capacity`] reports singular values, `ln det(GᴴG)`, high-SNR
//!    channel capacity and condition number.
//! 5. [`gradient`] differentiates `ln det(GᴴG)` with respect to every
//!    scatterer permittivity (and optionally permeability) using
//!    `K·(N+T)` solves per evaluation.
//! 6. [`optimizer`] maximizes the objective inside the design box with a
//!    projected Polak–Ribière nonlinear conjugate-gradient method.
//!
//! Time convention is `exp(+jωt)`: outgoing waves behave like `exp(-jkr)`.
//!
//! With the default `parallel` feature the per-frequency solves, the
//! per-variable gradient traces and multistart runs use rayon; without it
//! the same code paths run sequentially.

// `!(a > b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod capacity;
pub mod constants;
mod error;
pub mod export;
pub mod fdfd;
pub mod fixtures;
pub mod gradient;
pub mod green;
pub mod optimizer;
pub mod par;
pub mod scene;

pub use num_complex::Complex64 as C64;

pub use capacity::{analyze, capacity_delta, CapacityDelta, CapacityReport, SnrParams};
pub use error::{Error, Result};
pub use fdfd::{FieldMap, ForwardModel, HelmholtzSystem};
pub use gradient::{grad_logdet, GradientResult};
pub use green::{assemble_green, gramian, GreensMatrix};
pub use optimizer::{maximize, multistart, project_box, OptRunReport, OptimizerConfig};
pub use scene::{parse_scene, preset_reflection, preset_transmission, DesignVector, Scene};
