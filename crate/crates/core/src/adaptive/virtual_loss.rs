//! Virtual losses: synthetic loss events drawn at request arrivals with a
//! probability calibrated so that their rate is proportional to the true
//! loss rate of each content.

use crate::error::{Error, Result};
use crate::meanfield::theta_from_load;

/// `max(0, (D_c - lambda_hat) / theta_hat)`, the largest availability at
/// which virtual losses are still generated.
pub fn z_star(lambda_hat: f64, replicas: usize, theta_hat: f64) -> f64 {
    ((replicas as f64 - lambda_hat) / theta_hat).max(0.0)
}

/// `q_c(z) = prod_{i=1}^{z} (lambda + i theta) / (D - i + 1)`, the ratio
/// `pi(0) / pi(z)` of the availability distribution.
pub fn q_factor(lambda_hat: f64, replicas: usize, theta_hat: f64, z: usize) -> Result<f64> {
    if z >= replicas {
        return Err(Error::invalid(format!("q_factor needs z < D, got z={z}, D={replicas}")));
    }
    Ok(ln_q(lambda_hat, replicas, theta_hat, z).exp())
}

fn ln_q(lambda_hat: f64, replicas: usize, theta_hat: f64, z: usize) -> f64 {
    (1..=z)
        .map(|i| (lambda_hat + i as f64 * theta_hat).ln() - ((replicas - i + 1) as f64).ln())
        .sum()
}

/// `p_c(Z) = (min z* / z*_c) * 1(Z <= z*_c) * q_c(Z)`, clamped to `[0, 1]`.
/// Zero when `Z = 0` (a real loss) or `z*_c = 0`.
pub fn virtual_loss_probability(lambda_hat: f64, replicas: usize, z: usize, theta_hat: f64, min_z_star: f64) -> f64 {
    if z == 0 || z > replicas || !(theta_hat > 0.0) || !(min_z_star > 0.0) {
        return 0.0;
    }
    let zs = z_star(lambda_hat, replicas, theta_hat);
    if zs <= 0.0 || z as f64 > zs {
        return 0.0;
    }
    let p = (min_z_star / zs) * ln_q(lambda_hat, replicas, theta_hat, z).exp();
    p.clamp(0.0, 1.0)
}

/// Load estimates read off the current server occupancy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineEstimates {
    pub rho_eff: f64,
    pub theta_eff: f64,
}

impl OnlineEstimates {
    pub fn from_occupancy(busy: usize, m: usize, d: usize) -> Self {
        let rho_eff = busy as f64 / m as f64;
        let theta_eff = if busy >= m {
            f64::INFINITY
        } else {
            theta_from_load(rho_eff, d)
        };
        OnlineEstimates { rho_eff, theta_eff }
    }

    /// Virtual losses are off in an empty or saturated system.
    pub fn usable(&self) -> bool {
        self.theta_eff > 0.0 && self.theta_eff.is_finite()
    }
}
