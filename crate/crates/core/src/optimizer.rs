//! Static replication optimized for the average loss rate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{fixed_point_solve, loss_rate_exact, FixedPointOptions, MeanFieldSolution};
use crate::model::{
    check_sizes, integer_budget_round, proportional_replication, Catalog, ReplicationProfile, SystemParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMethod {
    ClosedForm,
    Greedy,
}

impl std::fmt::Display for OptimizerMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerMethod::ClosedForm => "closed_form",
            OptimizerMethod::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerReport {
    pub profile: ReplicationProfile,
    /// Mean-field average loss rate of `profile`.
    pub gamma_bar_predicted: f64,
    pub mean_replicas: f64,
    /// `ln(D_bar) / (theta * ln(1 + 1/theta))`.
    pub coefficient: f64,
    pub theta_eff: f64,
    pub method: OptimizerMethod,
}

/// Popularity adjustment coefficient `ln(D_bar) / (theta * ln(1 + 1/theta))`.
pub fn popularity_coefficient(mean_replicas: f64, theta_eff: f64) -> f64 {
    mean_replicas.ln() / (theta_eff * (1.0 / theta_eff).ln_1p())
}

/// Real-valued targets `D_bar + (lambda_c - lambda_bar) * coefficient`.
///
/// When some targets fall below zero or above the cap, a common shift is
/// applied to the unclamped ones so the budget is still met.
pub fn optimized_targets(
    catalog: &Catalog,
    params: &SystemParams,
    theta_eff: f64,
    cap_fraction: f64,
) -> Result<(Vec<f64>, f64)> {
    check_sizes(catalog, params)?;
    let mean_replicas = params.mean_replicas();
    if mean_replicas <= 1.0 {
        return Err(Error::invalid(format!(
            "optimized replication needs D_bar > 1, got {mean_replicas}"
        )));
    }
    if !(theta_eff > 0.0 && theta_eff.is_finite()) {
        return Err(Error::invalid(format!("theta_eff must be > 0, got {theta_eff}")));
    }
    let cap = params.replica_cap(cap_fraction) as f64;
    let budget = params.budget() as f64;
    if budget > cap * catalog.len() as f64 {
        return Err(Error::Infeasible(format!("budget {budget} exceeds n * cap")));
    }
    let coef = popularity_coefficient(mean_replicas, theta_eff);
    let lambda_bar = catalog.lambda_bar();
    let raw: Vec<f64> = catalog
        .popularities()
        .iter()
        .map(|l| mean_replicas + (l - lambda_bar) * coef)
        .collect();
    let clipped_sum = |shift: f64| -> f64 { raw.iter().map(|t| (t - shift).clamp(0.0, cap)).sum() };

    // total is non-increasing in the shift
    let mut lo = raw.iter().cloned().fold(f64::INFINITY, f64::min) - cap - 1.0;
    let mut hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_sum(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shift = 0.5 * (lo + hi);
    let mut targets: Vec<f64> = raw.iter().map(|t| (t - shift).clamp(0.0, cap)).collect();
    // absorb the bisection slack into the unclamped entries
    let slack = budget - targets.iter().sum::<f64>();
    let free: Vec<usize> = (0..targets.len())
        .filter(|&c| targets[c] > 0.0 && targets[c] < cap)
        .collect();
    if !free.is_empty() {
        let per = slack / free.len() as f64;
        for c in free {
            targets[c] = (targets[c] + per).clamp(0.0, cap);
        }
    }
    Ok((targets, coef))
}

/// Near-uniform replication with a logarithmic popularity adjustment, rounded
/// to the budget. Contents whose target is not positive get no replica.
pub fn optimized_replication(
    catalog: &Catalog,
    params: &SystemParams,
    theta_eff: f64,
    cap_fraction: f64,
    opts: &FixedPointOptions,
) -> Result<OptimizerReport> {
    let (targets, coefficient) = optimized_targets(catalog, params, theta_eff, cap_fraction)?;
    let replicas = integer_budget_round(&targets, params.budget())?;
    let profile = ReplicationProfile::new(replicas, params, cap_fraction)?;
    let solution = fixed_point_solve(catalog, &profile, params, opts)?;
    Ok(OptimizerReport {
        profile,
        gamma_bar_predicted: solution.gamma_bar,
        mean_replicas: params.mean_replicas(),
        coefficient,
        theta_eff,
        method: OptimizerMethod::ClosedForm,
    })
}

/// Full optimizer pipeline: `theta_eff` from the fixed point at proportional
/// replication, then optionally once more at the optimized profile.
pub fn optimize(
    catalog: &Catalog,
    params: &SystemParams,
    cap_fraction: f64,
    method: OptimizerMethod,
    two_pass: bool,
    opts: &FixedPointOptions,
) -> Result<OptimizerReport> {
    let reference = proportional_replication(catalog, params, cap_fraction)?;
    let theta = fixed_point_solve(catalog, &reference, params, opts)?
        .effective
        .theta_eff;
    let run = |theta: f64| -> Result<OptimizerReport> {
        match method {
            OptimizerMethod::ClosedForm => optimized_replication(catalog, params, theta, cap_fraction, opts),
            OptimizerMethod::Greedy => {
                let profile = greedy_marginal_allocation(catalog, params, theta, cap_fraction)?;
                let solution = fixed_point_solve(catalog, &profile, params, opts)?;
                Ok(OptimizerReport {
                    profile,
                    gamma_bar_predicted: solution.gamma_bar,
                    mean_replicas: params.mean_replicas(),
                    coefficient: popularity_coefficient(params.mean_replicas(), theta),
                    theta_eff: theta,
                    method,
                })
            }
        }
    };
    let first = run(theta)?;
    if !two_pass {
        return Ok(first);
    }
    let theta2 = fixed_point_solve(catalog, &first.profile, params, opts)?
        .effective
        .theta_eff;
    run(theta2)
}

/// Order-of-magnitude inefficiency of the optimized replication: the loss
/// rate of an average content, `(1 + 1/theta)^(-D_bar) * D_bar^(lambda_bar/theta)`,
/// divided by `lambda_bar`. No finite-size correction is applied.
pub fn predicted_optimal_inefficiency(params: &SystemParams, theta_eff: f64) -> Result<f64> {
    let mean_replicas = params.mean_replicas();
    if mean_replicas <= 1.0 {
        return Err(Error::invalid("prediction needs D_bar > 1"));
    }
    let ln_gamma = -mean_replicas * (1.0 / theta_eff).ln_1p() + params.lambda_bar / theta_eff * mean_replicas.ln();
    Ok(ln_gamma.exp() / params.lambda_bar)
}

#[derive(Debug, PartialEq)]
struct Gain {
    value: f64,
    content: usize,
}

impl Eq for Gain {}

impl Ord for Gain {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then_with(|| other.content.cmp(&self.content))
    }
}

impl PartialOrd for Gain {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Hands out the `m * d` replicas one at a time, each to the content whose
/// mean-field loss rate drops the most. The per-content loss is the exact
/// chain's `lambda * pi(0)` at a fixed `theta_eff`, which is decreasing and
/// convex in the replica count, so the greedy allocation is optimal for that
/// objective among integer profiles under the cap.
pub fn greedy_marginal_allocation(
    catalog: &Catalog,
    params: &SystemParams,
    theta_eff: f64,
    cap_fraction: f64,
) -> Result<ReplicationProfile> {
    check_sizes(catalog, params)?;
    let cap = params.replica_cap(cap_fraction);
    let budget = params.budget();
    if budget > cap * catalog.len() {
        return Err(Error::Infeasible(format!("budget {budget} exceeds n * cap")));
    }
    let lambdas = catalog.popularities();
    let mut replicas = vec![0usize; catalog.len()];
    let mut current: Vec<f64> = lambdas.to_vec();
    let mut next: Vec<f64> = lambdas.iter().map(|&l| loss_rate_exact(l, 1, theta_eff)).collect();
    let mut heap: BinaryHeap<Gain> = (0..catalog.len())
        .filter(|_| cap > 0)
        .map(|c| Gain {
            value: current[c] - next[c],
            content: c,
        })
        .collect();
    for _ in 0..budget {
        let Gain { content: c, .. } = heap
            .pop()
            .ok_or_else(|| Error::Infeasible("no content can take another replica".into()))?;
        replicas[c] += 1;
        current[c] = next[c];
        if replicas[c] < cap {
            next[c] = loss_rate_exact(lambdas[c], replicas[c] + 1, theta_eff);
            heap.push(Gain {
                value: current[c] - next[c],
                content: c,
            });
        }
    }
    ReplicationProfile::new(replicas, params, cap_fraction)
}

/// `sum_c gamma_c(D_c)` for the exact chain at a fixed `theta_eff`.
pub fn mean_field_objective(catalog: &Catalog, replicas: &[usize], theta_eff: f64) -> f64 {
    catalog
        .popularities()
        .iter()
        .zip(replicas)
        .map(|(&l, &r)| loss_rate_exact(l, r, theta_eff))
        .sum()
}

/// Mean-field solution for an optimizer report's profile.
pub fn evaluate(
    catalog: &Catalog,
    report: &OptimizerReport,
    params: &SystemParams,
    opts: &FixedPointOptions,
) -> Result<MeanFieldSolution> {
    fixed_point_solve(catalog, &report.profile, params, opts)
}
