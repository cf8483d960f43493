//! Standard normal distribution helpers.

use libm::erfc;
use std::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_741_78;

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal cumulative distribution `Phi(x)`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Phi(x)`, accurate far into the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_cdf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio(-x).ln()
    }
}

/// Mills ratio `R(y) = Phi(-y) / phi(y)`.
///
/// Finite for every `y` where `phi(y)` does not underflow; for `y > 30` a
/// continued fraction replaces the quotient.
pub fn mills_ratio(y: f64) -> f64 {
    if y <= 30.0 {
        std_normal_cdf(-y) / std_normal_pdf(y)
    } else {
        mills_continued_fraction(y)
    }
}

fn mills_continued_fraction(y: f64) -> f64 {
    // R(y) = 1/(y + 1/(y + 2/(y + 3/(y + ...)))), modified Lentz.
    let tiny = 1e-300;
    let mut f = y;
    let mut c = y;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64;
        d = y + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = y + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// `Phi(b) - Phi(a)` for `a <= b`, taken from the nearer tail so that
/// intervals far from the origin keep full relative precision.
pub fn std_normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        std_normal_cdf(-a) - std_normal_cdf(-b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interval_probabilities() {
        assert_relative_eq!(std_normal_interval(-1.0, 1.0), 0.682_689_492_137_085_9, max_relative = 1e-14);
        assert_relative_eq!(std_normal_interval(8.0, 9.0), std_normal_cdf(-8.0) - std_normal_cdf(-9.0), max_relative = 1e-14);
        assert!(std_normal_interval(8.0, 9.0) > 6e-16);
        assert_eq!(std_normal_interval(f64::NEG_INFINITY, f64::INFINITY), 1.0);
    }

    #[test]
    fn cdf_reference_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(40.0), 1.0);
        assert!((std_normal_cdf(1.0) - 0.841_344_746_068_542_948_6).abs() <= 1e-15);
        assert_relative_eq!(std_normal_cdf(-5.0), 2.866_515_718_791_939e-7, max_relative = 1e-13);
    }

    #[test]
    fn log_cdf_deep_tail() {
        // ln Phi(-20) from mpmath
        let expected = 2.753_624_118_606_233_7e-89_f64.ln();
        assert_relative_eq!(ln_std_normal_cdf(-20.0), expected, max_relative = 1e-13);
        let lhs = ln_std_normal_cdf(-30.0 + 1e-9);
        let rhs = ln_std_normal_cdf(-30.0 - 1e-9);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
    }

    #[test]
    fn mills_ratio_branches_agree() {
        for &y in &[8.0, 20.0, 30.0] {
            assert_relative_eq!(mills_continued_fraction(y), mills_ratio(y), max_relative = 1e-12);
        }
        // R(y) ~ 1/y - 1/y^3 for large y
        let y = 1e3;
        assert_relative_eq!(mills_ratio(y), 1.0 / y - 1.0 / y.powi(3), max_relative = 1e-9);
    }
}
