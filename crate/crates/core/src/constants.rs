//! Physical constants (SI).

pub const C0: f64 = 299_792_458.0;
pub const MU0: f64 = 1.256_637_062_12e-6;
pub const EPS0: f64 = 1.0 / (MU0 * C0 * C0);

/// Angular frequency for a frequency in hertz.
pub fn angular(hz: f64) -> f64 {
    2.0 * std::f64::consts::PI * hz
}

/// Free-space wavenumber for an angular frequency.
pub fn wavenumber(omega: f64) -> f64 {
    omega / C0
}
