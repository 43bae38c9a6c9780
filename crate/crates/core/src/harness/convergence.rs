use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::Snapshot;

/// Fraction of the total move a trajectory must cover to count as converged.
pub const CONVERGENCE_LEVEL: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecileConvergence {
    pub decile: usize,
    pub initial: f64,
    pub final_value: f64,
    /// First time the mean replica count covers 90% of the way from its
    /// initial to its final value.
    pub time_to_90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSummary {
    pub deciles: Vec<DecileConvergence>,
    pub top_time_to_90: f64,
    pub bottom_time_to_90: f64,
}

/// First crossing time of the 90% level of a scalar trajectory.
pub fn time_to_fraction(times: &[f64], values: &[f64], level: f64) -> f64 {
    let (x0, xf) = (values[0], values[values.len() - 1]);
    let target = x0 + level * (xf - x0);
    let sign = if xf >= x0 { 1.0 } else { -1.0 };
    times
        .iter()
        .zip(values)
        .find(|(_, &x)| (x - target) * sign >= 0.0)
        .map_or(times[times.len() - 1], |(&t, _)| t)
}

/// Per-decile convergence times of a replication trajectory.
pub fn convergence_metrics(trajectory: &[Snapshot]) -> Result<ConvergenceSummary> {
    if trajectory.len() < 2 {
        return Err(Error::invalid(format!(
            "convergence needs at least 2 snapshots, got {}",
            trajectory.len()
        )));
    }
    let times: Vec<f64> = trajectory.iter().map(|s| s.t).collect();
    let k = trajectory[0].decile_mean.len();
    let deciles: Vec<DecileConvergence> = (0..k)
        .map(|i| {
            let values: Vec<f64> = trajectory.iter().map(|s| s.decile_mean[i]).collect();
            DecileConvergence {
                decile: i,
                initial: values[0],
                final_value: values[values.len() - 1],
                time_to_90: time_to_fraction(&times, &values, CONVERGENCE_LEVEL),
            }
        })
        .collect();
    Ok(ConvergenceSummary {
        top_time_to_90: deciles[0].time_to_90,
        bottom_time_to_90: deciles[k - 1].time_to_90,
        deciles,
    })
}
