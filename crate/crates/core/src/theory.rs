//! The predicted linear relation between anonymity and log-reconstructability
//! and its empirical least-squares fit.
//!
//! Under a log-linear embedding model with related-term norms fixed at `c`,
//!
//! ```text
//! log ρ = (c·l / 2d) · (c + 2(1 − α)·‖v(A)‖) − log Z
//! ```
//!
//! The partition function is never estimated; it is absorbed into the
//! intercept of the fitted line.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model prediction for log ρ.
pub fn predicted_log_rho(alpha: f64, c: f64, norm_query: f64, dim: usize, l: usize, log_z: f64) -> f64 {
    let scale = c * l as f64 / (2.0 * dim as f64);
    scale * (c + 2.0 * (1.0 - alpha) * norm_query) - log_z
}

/// Slope of log ρ against α implied by the model: −c·l·‖v(A)‖ / d.
pub fn predicted_slope(c: f64, norm_query: f64, dim: usize, l: usize) -> f64 {
    -c * l as f64 * norm_query / dim as f64
}

/// Ordinary least-squares line `log ρ ≈ slope·α + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryFit {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub sample_count: usize,
}

impl TheoryFit {
    pub fn predict(&self, alpha: f64) -> f64 {
        self.slope * alpha + self.intercept
    }
}

/// Fits `(alpha, log_rho)` points. Non-finite points are ignored.
///
/// Points are sorted before accumulation so the result does not depend on
/// input order.
pub fn fit_relationship(points: &[(f64, f64)]) -> Result<TheoryFit> {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 finite points to fit, got {}",
            pts.len()
        )));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &pts {
        let (dx, dy) = (x - mean_x, y - mean_y);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidArgument("alpha values have zero variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let pearson_r = if syy > 0.0 {
        (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(TheoryFit {
        slope,
        intercept,
        pearson_r,
        r_squared: pearson_r * pearson_r,
        sample_count: pts.len(),
    })
}

/// Population coefficient of variation (std / mean); `None` for an empty
/// slice or a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return None;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt() / mean)
}
