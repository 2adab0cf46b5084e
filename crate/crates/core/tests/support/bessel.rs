//! Closed-form 2D Helmholtz Green's function for oracle tests.

use capmax_core::C64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `J0` and `Y0` by power series; accurate to ~1e-10 for `x < 12`.
pub fn bessel_series(x: f64) -> (f64, f64) {
    let q = x * x / 4.0;
    let (mut j0, mut s) = (0.0, 0.0);
    let mut term = 1.0;
    let mut harmonic = 0.0;
    for k in 0..80 {
        if k > 0 {
            term *= -q / (k * k) as f64;
            harmonic += 1.0 / k as f64;
        }
        j0 += term;
        s -= term * harmonic;
    }
    let y0 = std::f64::consts::FRAC_2_PI * (((x / 2.0).ln() + EULER_GAMMA) * j0 + s);
    (j0, y0)
}

/// Large-argument expansion; accurate to ~1e-9 for `x ≥ 12`.
pub fn bessel_asymptotic(x: f64) -> (f64, f64) {
    let z = 1.0 / (x * x);
    let p = 1.0 - 9.0 / 128.0 * z + 3675.0 / 32768.0 * z * z
        - 108_056_025.0 / 188_743_680.0 * z * z * z;
    let q = (-1.0 / 8.0 + 75.0 / 1024.0 * z - 59535.0 / 262144.0 * z * z
        + 18_261_468_225.0 / 10_569_646_080.0 * z * z * z)
        / x;
    let chi = x - std::f64::consts::FRAC_PI_4;
    let a = (std::f64::consts::FRAC_2_PI / x).sqrt();
    (
        a * (p * chi.cos() - q * chi.sin()),
        a * (p * chi.sin() + q * chi.cos()),
    )
}

pub fn bessel(x: f64) -> (f64, f64) {
    if x < 12.0 {
        bessel_series(x)
    } else {
        bessel_asymptotic(x)
    }
}

/// `H0^(2)(x) = J0(x) − j Y0(x)`.
pub fn hankel2(x: f64) -> C64 {
    let (j, y) = bessel(x);
    C64::new(j, -y)
}
