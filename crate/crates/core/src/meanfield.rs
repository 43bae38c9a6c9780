//! Mean-field analysis of a fixed replication.
//!
//! Each content is decoupled from the rest of the system: its number of
//! available replicas `Z_c` becomes a birth-death chain with up-rate
//! `D_c - z` (a busy server holding `c` finishes its service) and down-rate
//! `lambda_c + z * theta_eff` (a request for `c`, or a request for another
//! content landing on a server that also stores `c`). The contention rate
//! `theta_eff` depends on the load the edge actually absorbs, which in turn
//! depends on the average loss rate, so the whole model closes as a fixed
//! point in `gamma_bar`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{check_sizes, Catalog, ReplicationProfile, SystemParams};

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Probabilities below this are treated as this value before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

/// Absorbed load and the contention rate it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub rho_eff: f64,
    pub theta_eff: f64,
    pub d: usize,
}

impl EffectiveParams {
    /// Effective parameters when the edge loses `gamma_bar` requests per
    /// content and unit of time on average.
    pub fn from_loss(params: &SystemParams, gamma_bar: f64) -> Result<Self> {
        if params.d < 2 {
            return Err(Error::invalid(
                "mean-field analysis needs d >= 2 (theta_eff vanishes for d = 1)",
            ));
        }
        if !(gamma_bar >= 0.0 && gamma_bar <= params.lambda_bar) {
            return Err(Error::invalid(format!(
                "gamma_bar={gamma_bar} outside [0, lambda_bar={}]",
                params.lambda_bar
            )));
        }
        let rho_eff = params.rho * (1.0 - gamma_bar / params.lambda_bar);
        Ok(EffectiveParams {
            rho_eff,
            theta_eff: theta_from_load(rho_eff, params.d),
            d: params.d,
        })
    }
}

/// `rho / (1 - rho) * (d - 1) / d`.
pub fn theta_from_load(rho_eff: f64, d: usize) -> f64 {
    rho_eff / (1.0 - rho_eff) * (d as f64 - 1.0) / d as f64
}

/// `binom(k + x, l) = (1 / l!) * prod_{i = k - l + 1}^{k} (i + x)`, defined for
/// a real shift `x >= 0`. Evaluated in log space.
pub fn extended_binomial(k: u64, x: f64, l: u64) -> Result<f64> {
    ln_extended_binomial(k, x, l).map(f64::exp)
}

pub fn ln_extended_binomial(k: u64, x: f64, l: u64) -> Result<f64> {
    if l > k {
        return Err(Error::invalid(format!("extended binomial needs l <= k (l={l}, k={k})")));
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::invalid(format!("extended binomial needs x >= 0, got {x}")));
    }
    let mut acc = 0.0;
    for i in (k - l + 1)..=k {
        acc += (i as f64 + x).ln();
    }
    Ok(acc - ln_gamma(l as f64 + 1.0))
}

/// Stationary law of the number of available replicas of one content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityDistribution {
    pub content: usize,
    /// `probs[z] = pi(Z_c = z)` for `z = 0..=D_c`.
    pub probs: Vec<f64>,
    pub mean: f64,
    /// Exact argmax of `probs`.
    pub mode: usize,
    /// Closed-form mode estimate `(D_c - lambda_c) / (1 + theta_eff)`.
    pub mode_estimate: f64,
}

impl AvailabilityDistribution {
    pub fn unavailability(&self) -> f64 {
        self.probs[0]
    }

    pub fn replicas(&self) -> usize {
        self.probs.len() - 1
    }
}

/// Exact stationary distribution of the availability chain, normalized by
/// summation. Weights are propagated outward from the mode so that the
/// local-balance ratios are kept to rounding precision.
pub fn availability_distribution(
    content: usize,
    lambda: f64,
    replicas: usize,
    theta_eff: f64,
) -> AvailabilityDistribution {
    let d = replicas;
    let mode_estimate = (d as f64 - lambda) / (1.0 + theta_eff);
    if d == 0 {
        return AvailabilityDistribution {
            content,
            probs: vec![1.0],
            mean: 0.0,
            mode: 0,
            mode_estimate,
        };
    }
    // ratio[z] = pi(z + 1) / pi(z)
    let ratio: Vec<f64> = (0..d)
        .map(|z| (d - z) as f64 / (lambda + (z + 1) as f64 * theta_eff))
        .collect();
    let mode = ratio.iter().position(|&r| r < 1.0).unwrap_or(d);
    let mut w = vec![0.0; d + 1];
    w[mode] = 1.0;
    for z in mode..d {
        w[z + 1] = w[z] * ratio[z];
    }
    for z in (0..mode).rev() {
        w[z] = w[z + 1] / ratio[z];
    }
    let total: f64 = w.iter().sum();
    let probs: Vec<f64> = w.into_iter().map(|v| v / total).collect();
    let mean = probs.iter().enumerate().map(|(z, p)| z as f64 * p).sum();
    AvailabilityDistribution {
        content,
        probs,
        mean,
        mode,
        mode_estimate,
    }
}

/// `pi(Z_c = 0)` of the exact chain without materializing the distribution.
pub fn exact_unavailability(lambda: f64, replicas: usize, theta_eff: f64) -> f64 {
    if replicas == 0 {
        return 1.0;
    }
    // 1 / pi(0) = sum_z prod_{i=1}^{z} (D - i + 1) / (lambda + i * theta)
    let d = replicas;
    let mut ln_term = 0.0f64;
    let mut ln_terms = Vec::with_capacity(d + 1);
    ln_terms.push(0.0);
    let mut peak = 0.0f64;
    for i in 1..=d {
        ln_term += ((d - i + 1) as f64).ln() - (lambda + i as f64 * theta_eff).ln();
        ln_terms.push(ln_term);
        peak = peak.max(ln_term);
    }
    let sum: f64 = ln_terms.iter().map(|t| (t - peak).exp()).sum();
    (-(peak + sum.ln())).exp()
}

/// Loss rate `lambda_c * pi(Z_c = 0)` of the exact chain.
pub fn loss_rate_exact(lambda: f64, replicas: usize, theta_eff: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda * exact_unavailability(lambda, replicas, theta_eff)
}

/// `C(lambda) = exp(-C_euler * lambda / theta) / ((1 + theta)^(lambda / theta) * Gamma(1 + lambda / theta))`.
pub fn unavailability_constant(lambda: f64, theta_eff: f64) -> f64 {
    ln_unavailability_constant(lambda, theta_eff).exp()
}

fn ln_unavailability_constant(lambda: f64, theta_eff: f64) -> f64 {
    let x = lambda / theta_eff;
    -EULER_GAMMA * x - x * theta_eff.ln_1p() - ln_gamma(1.0 + x)
}

/// Large-replication asymptotic of the loss rate:
/// `lambda * C(lambda) * (1 + 1/theta)^(-D) * D^(lambda/theta)`, clamped to
/// `lambda`. With no replica every request is lost.
pub fn loss_rate_closed_form(lambda: f64, replicas: usize, theta_eff: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    if replicas == 0 {
        return lambda;
    }
    lambda.min(lambda * ln_closed_unavailability(lambda, replicas, theta_eff).exp())
}

fn ln_closed_unavailability(lambda: f64, replicas: usize, theta_eff: f64) -> f64 {
    let d = replicas as f64;
    ln_unavailability_constant(lambda, theta_eff) - d * (1.0 / theta_eff).ln_1p() + lambda / theta_eff * d.ln()
}

/// First-order difference `gamma(D + 1) - gamma(D)` keeping the dominant
/// orders in `D`: `-gamma / (1 + theta) * (1 - lambda / D)`.
pub fn loss_derivative(lambda: f64, replicas: usize, theta_eff: f64) -> Result<f64> {
    if replicas == 0 {
        return Err(Error::invalid("loss derivative needs D >= 1"));
    }
    let gamma = loss_rate_closed_form(lambda, replicas, theta_eff);
    Ok(-gamma / (1.0 + theta_eff) * (1.0 - lambda / replicas as f64))
}

/// Which per-content loss formula closes the fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossModel {
    /// `lambda * pi(0)` of the exactly normalized chain.
    #[default]
    Exact,
    /// The closed-form asymptotic.
    ClosedForm,
}

impl LossModel {
    pub fn loss_rate(self, lambda: f64, replicas: usize, theta_eff: f64) -> f64 {
        match self {
            LossModel::Exact => loss_rate_exact(lambda, replicas, theta_eff),
            LossModel::ClosedForm => loss_rate_closed_form(lambda, replicas, theta_eff),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FixedPointMethod {
    /// Damped iteration, switching to bisection if it stalls.
    #[default]
    Damped,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub damping: f64,
    pub loss_model: LossModel,
    pub method: FixedPointMethod,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
            damping: 0.5,
            loss_model: LossModel::Exact,
            method: FixedPointMethod::Damped,
        }
    }
}

/// Solved mean-field model for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub effective: EffectiveParams,
    /// Per-content loss rates under the model used for the fixed point.
    pub gamma: Vec<f64>,
    pub gamma_closed: Vec<f64>,
    pub gamma_exact: Vec<f64>,
    pub gamma_bar: f64,
    pub inefficiency: f64,
    pub iterations: usize,
    pub residual: f64,
    pub loss_model: LossModel,
    pub method: FixedPointMethod,
}

impl MeanFieldSolution {
    pub fn distribution(&self, content: usize, lambda: f64, replicas: usize) -> AvailabilityDistribution {
        availability_distribution(content, lambda, replicas, self.effective.theta_eff)
    }
}

struct LossMap<'a> {
    lambdas: &'a [f64],
    replicas: &'a [usize],
    params: &'a SystemParams,
    model: LossModel,
}

impl LossMap<'_> {
    /// `gamma_bar_out` produced by plugging `gamma_bar_in` into `theta_eff`.
    fn eval(&self, gamma_bar_in: f64) -> Result<f64> {
        let eff = EffectiveParams::from_loss(self.params, gamma_bar_in)?;
        let total: f64 = self
            .lambdas
            .iter()
            .zip(self.replicas)
            .map(|(&l, &r)| self.model.loss_rate(l, r, eff.theta_eff))
            .sum();
        Ok(total / self.lambdas.len() as f64)
    }
}

fn relative_residual(g_in: f64, g_out: f64) -> f64 {
    (g_out - g_in).abs() / g_out.max(PROB_FLOOR)
}

/// One evaluation of the fixed-point map: the average loss rate produced when
/// `gamma_bar_in` sets the effective load.
pub fn fixed_point_map(
    catalog: &Catalog,
    profile: &ReplicationProfile,
    params: &SystemParams,
    loss_model: LossModel,
    gamma_bar_in: f64,
) -> Result<f64> {
    check_sizes(catalog, params)?;
    LossMap {
        lambdas: catalog.popularities(),
        replicas: profile.replicas(),
        params,
        model: loss_model,
    }
    .eval(gamma_bar_in)
}

/// Solves `gamma_bar = F(gamma_bar)` where `F` is the (decreasing) average
/// loss rate produced by the effective load `rho * (1 - gamma_bar / lambda_bar)`.
pub fn fixed_point_solve(
    catalog: &Catalog,
    profile: &ReplicationProfile,
    params: &SystemParams,
    opts: &FixedPointOptions,
) -> Result<MeanFieldSolution> {
    check_sizes(catalog, params)?;
    if profile.len() != catalog.len() {
        return Err(Error::invalid("profile and catalog sizes differ"));
    }
    if params.d < 2 {
        return Err(Error::invalid("mean-field analysis needs d >= 2"));
    }
    let map = LossMap {
        lambdas: catalog.popularities(),
        replicas: profile.replicas(),
        params,
        model: opts.loss_model,
    };

    let (gamma_bar, iterations, residual, method) = match opts.method {
        FixedPointMethod::Damped => match damped(&map, opts)? {
            Some(found) => found,
            None => {
                let (g, it, res) = bisection(&map, opts)?;
                (g, it, res, FixedPointMethod::Bisection)
            }
        },
        FixedPointMethod::Bisection => {
            let (g, it, res) = bisection(&map, opts)?;
            (g, it, res, FixedPointMethod::Bisection)
        }
    };

    let effective = EffectiveParams::from_loss(params, gamma_bar)?;
    let theta = effective.theta_eff;
    let gamma_exact: Vec<f64> = map
        .lambdas
        .iter()
        .zip(map.replicas)
        .map(|(&l, &r)| loss_rate_exact(l, r, theta))
        .collect();
    let gamma_closed: Vec<f64> = map
        .lambdas
        .iter()
        .zip(map.replicas)
        .map(|(&l, &r)| loss_rate_closed_form(l, r, theta))
        .collect();
    let gamma = match opts.loss_model {
        LossModel::Exact => gamma_exact.clone(),
        LossModel::ClosedForm => gamma_closed.clone(),
    };
    let gamma_bar_out = gamma.iter().sum::<f64>() / gamma.len() as f64;
    Ok(MeanFieldSolution {
        effective,
        gamma,
        gamma_closed,
        gamma_exact,
        gamma_bar: gamma_bar_out,
        inefficiency: gamma_bar_out / params.lambda_bar,
        iterations,
        residual: residual.max(relative_residual(gamma_bar, gamma_bar_out)),
        loss_model: opts.loss_model,
        method,
    })
}

type Found = (f64, usize, f64, FixedPointMethod);

fn damped(map: &LossMap<'_>, opts: &FixedPointOptions) -> Result<Option<Found>> {
    let lambda_bar = map.params.lambda_bar;
    let mut g = 0.0;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for it in 1..=opts.max_iterations {
        let out = map.eval(g)?;
        let res = relative_residual(g, out);
        if res <= opts.tolerance {
            return Ok(Some((out, it, res, FixedPointMethod::Damped)));
        }
        if res < best * 0.999 {
            best = res;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= 50 {
                return Ok(None);
            }
        }
        g = ((1.0 - opts.damping) * g + opts.damping * out).clamp(0.0, lambda_bar);
    }
    Ok(None)
}

fn bisection(map: &LossMap<'_>, opts: &FixedPointOptions) -> Result<(f64, usize, f64)> {
    // F(g) - g is decreasing: non-negative at 0, non-positive near lambda_bar
    let mut lo = 0.0;
    let mut hi = map.params.lambda_bar * (1.0 - 1e-12);
    let f_lo = map.eval(lo)?;
    if relative_residual(lo, f_lo) <= opts.tolerance {
        return Ok((f_lo, 1, relative_residual(lo, f_lo)));
    }
    let mut last = (f_lo, f64::INFINITY);
    for it in 1..=opts.max_iterations.max(1) {
        let mid = 0.5 * (lo + hi);
        let out = map.eval(mid)?;
        let res = relative_residual(mid, out);
        last = (out, res);
        if res <= opts.tolerance {
            return Ok((out, it, res));
        }
        if out > mid {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.max(PROB_FLOOR) {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: last.1,
    })
}
