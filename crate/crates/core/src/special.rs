//! Normal-distribution special functions with tail-stable logarithms.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// `0.5 * ln(2π)`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI).exp()
}

pub fn norm_log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Upper tail `P(Z > z)`.
pub fn norm_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln P(Z > z)`, accurate far into the upper tail.
pub fn norm_log_sf(z: f64) -> f64 {
    if z < 30.0 {
        norm_sf(z).ln()
    } else {
        // Asymptotic Mills-ratio expansion; truncation error below 1e-16 relative at z >= 30.
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2)
            + 105.0 / (z2 * z2 * z2 * z2);
        -0.5 * z2 - (z * (2.0 * PI).sqrt()).ln() + series.ln()
    }
}

pub fn norm_log_cdf(z: f64) -> f64 {
    norm_log_sf(-z)
}

/// `φ(z) / P(Z > z)`, the standard normal hazard.
pub fn norm_hazard(z: f64) -> f64 {
    (norm_log_pdf(z) - norm_log_sf(z)).exp()
}

pub fn norm_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    a + (-(b - a).exp_m1()).ln()
}
