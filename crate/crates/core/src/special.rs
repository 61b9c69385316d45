//! Normal-distribution helpers shared by the bound evaluators and statistics.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf;
use std::f64::consts::{PI, SQRT_2};

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / SQRT_2)
}

/// Upper tail `1 - Φ(x)`, accurate far into the tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erf::erfc(x / SQRT_2)
}

/// `ln Φ(x)`, finite for very negative `x`.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        norm_cdf(x).ln()
    } else {
        // Mills-ratio asymptotics.
        let y2 = 1.0 / (x * x);
        -0.5 * x * x - (-x).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - y2 + 3.0 * y2 * y2).ln()
    }
}

pub fn norm_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Gaussian density with variance `var`, evaluated at `x`.
pub fn gauss_density(var: f64, x: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_cdf_matches_direct_where_both_work() {
        for &x in &[-29.0, -10.0, -1.0, 0.0, 2.0] {
            assert!((ln_norm_cdf(x) - norm_cdf(x).ln()).abs() < 1e-10 * (1.0 + x * x));
        }
        // Continuity across the switch point.
        let lo = ln_norm_cdf(-30.0 - 1e-9);
        let hi = ln_norm_cdf(-30.0 + 1e-9);
        assert!((lo - hi).abs() < 1e-4 * hi.abs());
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.01, 0.3, 0.5, 0.99] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-12);
        }
    }
}
