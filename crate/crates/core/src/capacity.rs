//! Singular-value diagnostics of a sensing matrix.
//!
//! The high-SNR channel capacity over `T` channels with singular values
//! `σ_t` is
//!
//! ```text
//! C ≈ T·log2(Σ_t P_t/N0) + Σ_t log2(σ_t²/T)
//! ```
//!
//! `T` here is the number of measurement channels, i.e. the `K·T` columns
//! of the Green's matrix. `ln det(GᴴG) = Σ_t ln σ_t²`, so the capacity and
//! the log-det objective differ only by constants.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::green::GreensMatrix;
use crate::{Error, Result};

/// `σ_min/σ_max` below which a matrix is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrParams {
    /// Per-channel transmit power `P_t` (W).
    pub channel_power: f64,
    /// Noise power `N0` (W).
    pub noise_power: f64,
}

impl Default for SnrParams {
    fn default() -> Self {
        Self {
            channel_power: 1.0,
            noise_power: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityReport {
    /// Descending.
    pub singular_values: Vec<f64>,
    /// `ln det(GᴴG)` in nats; `-inf` when rank deficient.
    pub logdet_gramian: f64,
    pub capacity_bits: f64,
    /// `σ_max/σ_min`; `inf` when rank deficient.
    pub condition_number: f64,
    pub snr: SnrParams,
    /// Number of channels (columns of `G`).
    pub channels: usize,
    /// Number of rows of `G`.
    pub rows: usize,
    pub rank_deficient: bool,
}

impl CapacityReport {
    /// Builds a report from singular values (any order).
    pub fn from_singular_values(mut sv: Vec<f64>, rows: usize, snr: SnrParams) -> Self {
        sv.sort_by(|a, b| b.total_cmp(a));
        let channels = sv.len();
        let smax = sv.first().copied().unwrap_or(0.0);
        let smin = sv.last().copied().unwrap_or(0.0);
        let rank_deficient = channels == 0 || smax <= 0.0 || smin < RANK_TOLERANCE * smax;
        let (logdet, cond, cap) = if rank_deficient {
            (f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY)
        } else {
            let logdet: f64 = sv.iter().map(|s| 2.0 * s.ln()).sum();
            (logdet, smax / smin, capacity_from_singular_values(&sv, snr))
        };
        Self {
            singular_values: sv,
            logdet_gramian: logdet,
            capacity_bits: cap,
            condition_number: cond,
            snr,
            channels,
            rows,
            rank_deficient,
        }
    }

    /// `index,sigma,log2_sigma`.
    pub fn write_singular_values_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,sigma,log2_sigma")?;
        for (i, s) in self.singular_values.iter().enumerate() {
            writeln!(w, "{i},{s:e},{:e}", s.log2())?;
        }
        Ok(())
    }
}

/// `T·log2(T·P/N0) + Σ log2(σ_t²/T)`.
pub fn capacity_from_singular_values(sv: &[f64], snr: SnrParams) -> f64 {
    let t = sv.len() as f64;
    let first = t * (t * snr.channel_power / snr.noise_power).log2();
    first + sv.iter().map(|s| (s * s / t).log2()).sum::<f64>()
}

/// Capacity from `ln det(GᴴG)` alone, for `channels` singular values.
pub fn capacity_from_logdet(logdet: f64, channels: usize, snr: SnrParams) -> f64 {
    let t = channels as f64;
    t * (t * snr.channel_power / snr.noise_power).log2() + logdet / std::f64::consts::LN_2
        - t * t.log2()
}

pub fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Full diagnostics for a sensing matrix.
pub fn analyze(g: &GreensMatrix, snr: SnrParams) -> CapacityReport {
    analyze_matrix(g.data(), snr)
}

pub fn analyze_matrix(m: &DMatrix<C64>, snr: SnrParams) -> CapacityReport {
    CapacityReport::from_singular_values(singular_values(m), m.nrows(), snr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityDelta {
    /// `after.capacity_bits − before.capacity_bits`.
    pub bits: f64,
    /// `before.condition_number / after.condition_number`; above one means
    /// the design got better conditioned.
    pub condition_ratio: f64,
}

pub fn capacity_delta(before: &CapacityReport, after: &CapacityReport) -> Result<CapacityDelta> {
    if before.channels != after.channels || before.rows != after.rows {
        return Err(Error::DimensionMismatch(format!(
            "reports disagree: {}x{} vs {}x{}",
            before.rows, before.channels, after.rows, after.channels
        )));
    }
    if before.snr != after.snr {
        return Err(Error::InvalidInput(
            "reports use different SNR parameters".into(),
        ));
    }
    Ok(CapacityDelta {
        bits: after.capacity_bits - before.capacity_bits,
        condition_ratio: before.condition_number / after.condition_number,
    })
}
