//! Small numerical summaries shared by the risk and reporting code.

use crate::error::{Error, Result};

/// Sample mean and standard error `sd / √m` (sd with `m − 1` denominator).
pub fn mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    let m = values.len();
    if m < 2 {
        return Err(Error::InsufficientData(format!(
            "a standard error needs at least 2 values, got {m}"
        )));
    }
    let mf = m as f64;
    let mean = values.iter().sum::<f64>() / mf;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (mf - 1.0)).sqrt() / mf.sqrt()))
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Ordinary least-squares line `y ≈ intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
}

pub fn ols_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "a line fit needs at least 2 points, got {}",
            x.len()
        )));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok(LineFit {
        intercept: my - slope * mx,
        slope,
    })
}
