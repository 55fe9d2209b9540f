//! Tail probabilities used by the tests and fits.

use statrs::distribution::{ContinuousCDF, StudentsT};
use libm::erfc;

/// Upper tail of the standard normal, `P[Z > z]`.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided Wald p-value for a z statistic.
pub fn wald_p(z: f64) -> f64 {
    if z.is_nan() {
        return 1.0;
    }
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Upper tail of chi-square with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    erfc((x / 2.0).sqrt())
}

/// Upper tail of chi-square with `2k` degrees of freedom, evaluated by the
/// finite Poisson sum `exp(-x/2) * sum_{i<k} (x/2)^i / i!`.
pub fn chi2_even_sf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let h = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for i in 1..k {
        term *= h / i as f64;
        sum += term;
    }
    (-h + sum.ln()).exp().min(1.0)
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}
