//! Gaussian density, distribution function and interval masses.
//!
//! Interval masses are evaluated on whichever tail keeps the subtraction
//! well conditioned, so masses far out in either tail keep full relative
//! precision instead of cancelling to zero.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Density of `N(mean, sd)` at `x`.
pub fn pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    (-0.5 * u * u).exp() / (sd * (2.0 * PI).sqrt())
}

/// Log-density of `N(mean, sd)` at `x`.
pub fn ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let u = (x - mean) / sd;
    -0.5 * u * u - sd.ln() - 0.5 * (2.0 * PI).ln()
}

/// Standard normal distribution function.
pub fn cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * FRAC_1_SQRT_2)
}

/// Standard normal upper tail `1 - cdf(u)`.
pub fn sf(u: f64) -> f64 {
    0.5 * libm::erfc(u * FRAC_1_SQRT_2)
}

/// Probability that a standard normal variate lies in `(lo, hi]`.
pub fn std_interval_mass(lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let m = if lo >= 0.0 {
        sf(lo) - sf(hi)
    } else if hi <= 0.0 {
        cdf(hi) - cdf(lo)
    } else {
        1.0 - sf(hi) - cdf(lo)
    };
    m.max(0.0)
}

/// Probability that `N(mean, sd)` lies in `(lo, hi]`.
pub fn interval_mass(lo: f64, hi: f64, mean: f64, sd: f64) -> f64 {
    std_interval_mass((lo - mean) / sd, (hi - mean) / sd)
}
