//! Comparison fitters: a Poisson smoothing spline on all observations
//! (DSS) and on the strictly positive observations only (NZSS).

use crate::data::BinnedCountData;
use crate::error::{Result, ZissError};
use crate::rkhs::{fit_with_policy, LambdaPolicy, NewtonOptions, SplineMeanCurve};

/// Smoothing spline on all data, zeros included.
pub fn fit_dss(data: &BinnedCountData, policy: &LambdaPolicy) -> Result<SplineMeanCurve> {
    if !data.has_positive() {
        return Err(ZissError::Degenerate("all counts are zero".into()));
    }
    let weights: Vec<f64> = data.replicates().iter().map(|&m| m as f64).collect();
    let fit = fit_with_policy(
        data.points(),
        data.domain(),
        &weights,
        &data.point_means(),
        data.n_obs(),
        policy,
        &NewtonOptions::default(),
    )?;
    Ok(fit.curve)
}

/// Smoothing spline on the positive counts only.
pub fn fit_nzss(data: &BinnedCountData, policy: &LambdaPolicy) -> Result<SplineMeanCurve> {
    let mut weights = Vec::with_capacity(data.n_points());
    let mut means = Vec::with_capacity(data.n_points());
    for row in data.counts() {
        let (n, sum) = row
            .iter()
            .filter(|&&y| y > 0)
            .fold((0usize, 0u64), |(n, s), &y| (n + 1, s + y));
        weights.push(n as f64);
        means.push(if n > 0 { sum as f64 / n as f64 } else { 0.0 });
    }
    let n_pos: usize = weights.iter().map(|&w| w as usize).sum();
    if weights.iter().filter(|&&w| w > 0.0).count() < 2 {
        return Err(ZissError::Degenerate(
            "need positive counts at two or more points".into(),
        ));
    }
    let fit = fit_with_policy(
        data.points(),
        data.domain(),
        &weights,
        &means,
        n_pos,
        policy,
        &NewtonOptions::default(),
    )?;
    Ok(fit.curve)
}
