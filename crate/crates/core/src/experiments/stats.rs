//! Log-log slope fits and small summaries.

use crate::error::{Error, Result};

/// OLS slope of `ln value` against `ln n`, with its standard error.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::Config(format!("slope fit needs at least 3 points, got {}", points.len())));
    }
    if let Some((n, v)) = points.iter().find(|(n, v)| v.is_nan() || *v <= 0.0 || n.is_nan() || *n <= 0.0) {
        return Err(Error::Config(format!("slope fit needs positive values, got ({n}, {v})")));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("slope fit needs at least two distinct n".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (sse / (m - 2.0) / sxx).sqrt();
    Ok((slope, stderr))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}
