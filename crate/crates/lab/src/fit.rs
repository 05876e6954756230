//! Exponential fit of the terminal energy lift `Δ(t) ≈ C e^{-a (T - t)}`.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "C")]
    pub c: f64,
    pub a: f64,
    pub window: [f64; 2],
    pub points_used: usize,
    pub rms_log_residual: f64,
}

/// Ordinary least squares of `log Δ` against `T - t` over `window = [t_lo, t_hi]`,
/// with `T` the last time of the series.
///
/// Points at or below `10 * floor` are dropped.
pub fn fit_terminal_rate(series: &[(f64, f64)], window: [f64; 2], floor: f64) -> LabResult<FitResult> {
    let horizon = series.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, g)| *t >= window[0] - 1e-12 && *t <= window[1] + 1e-12 && g.is_finite() && *g > 10.0 * floor)
        .map(|(t, g)| (horizon - t, g.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(LabError::NoLift { points: pts.len() });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(LabError::NoLift { points: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    Ok(FitResult { c: intercept.exp(), a: -slope, window, points_used: pts.len(), rms_log_residual: rms })
}

/// Window covering the last `length` time units before `horizon`.
pub fn last_window(horizon: f64, length: f64) -> [f64; 2] {
    [horizon - length, horizon]
}
