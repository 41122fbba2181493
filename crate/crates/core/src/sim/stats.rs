use serde::{Deserialize, Serialize};

use super::trace::SimTrace;

/// Spinning-reserve statistics of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    /// `sum |P_spin| dt`.
    pub total: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

pub fn summarize_series(p_spin: &[f64], dt: f64) -> StatsTable {
    if p_spin.is_empty() {
        return StatsTable { total: 0.0, mean: 0.0, std: 0.0, max: 0.0, min: 0.0 };
    }
    let n = p_spin.len() as f64;
    let mean = p_spin.iter().sum::<f64>() / n;
    let var = p_spin.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n;
    StatsTable {
        total: p_spin.iter().map(|p| p.abs()).sum::<f64>() * dt,
        mean,
        std: var.sqrt(),
        max: p_spin.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: p_spin.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

pub fn summarize(trace: &SimTrace) -> StatsTable {
    let series: Vec<f64> = trace.iso.iter().map(|r| r.p_spin).collect();
    summarize_series(&series, trace.dt_min)
}
