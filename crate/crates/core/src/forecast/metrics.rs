use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `2 [rho (z - zhat) 1{z > zhat} + (1 - rho)(zhat - z) 1{z <= zhat}]`.
pub fn quantile_loss(rho: f64, z: f64, zhat: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {rho}")));
    }
    let d = z - zhat;
    Ok(if d > 0.0 { 2.0 * rho * d } else { 2.0 * (1.0 - rho) * (-d) })
}

fn check_pair(targets: &[f64], predictions: &[f64]) -> Result<()> {
    if targets.len() != predictions.len() {
        return Err(Error::invalid(format!(
            "{} targets but {} predictions",
            targets.len(),
            predictions.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::invalid("no target points"));
    }
    Ok(())
}

/// `sum QL_rho(z, zhat) / sum |z|` over all points.
pub fn normalized_quantile_loss(rho: f64, targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets, predictions)?;
    let denom: f64 = targets.iter().map(|z| z.abs()).sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("normalized quantile loss undefined: all targets are zero"));
    }
    let mut num = 0.0;
    for (z, p) in targets.iter().zip(predictions) {
        num += quantile_loss(rho, *z, *p)?;
    }
    Ok(num / denom)
}

pub fn rmse(targets: &[f64], predictions: &[f64]) -> Result<f64> {
    check_pair(targets, predictions)?;
    let sse: f64 = targets.iter().zip(predictions).map(|(z, p)| (z - p).powi(2)).sum();
    Ok((sse / targets.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p50ql: f64,
    pub p90ql: f64,
    pub rmse: f64,
    pub n_points: usize,
}

impl MetricReport {
    /// Metrics from aligned targets, median and 0.9-quantile forecasts, and
    /// point (mean) forecasts.
    pub fn compute(targets: &[f64], p50: &[f64], p90: &[f64], mean: &[f64]) -> Result<Self> {
        Ok(Self {
            p50ql: normalized_quantile_loss(0.5, targets, p50)?,
            p90ql: normalized_quantile_loss(0.9, targets, p90)?,
            rmse: rmse(targets, mean)?,
            n_points: targets.len(),
        })
    }
}

/// Empirical quantile with linear interpolation between order statistics of
/// an already sorted sample.
pub fn sorted_quantile(sorted: &[f64], rho: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * rho.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
