//! Chi-square quantiles for innovation gating and consistency scoring.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// The x with `P(X <= x) = p` for a chi-square variable with `dof` degrees
/// of freedom.
pub fn chi_square_quantile(p: f64, dof: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must be in (0, 1), got {p}");
    ChiSquared::new(dof).expect("dof must be positive").inverse_cdf(p)
}

/// p-quantile of the mean of `runs` independent chi-square variables with
/// `dof` degrees of freedom each. Tightens toward `dof` as runs grow.
pub fn averaged_chi_square_bound(p: f64, dof: f64, runs: usize) -> f64 {
    chi_square_quantile(p, dof * runs as f64) / runs as f64
}
