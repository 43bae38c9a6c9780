//! Static problem instances: system sizing, content popularities and
//! replication profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// No content may be replicated on more than this fraction of the servers.
pub const DEFAULT_CAP_FRACTION: f64 = 0.95;

/// Sizing of an edge-assisted CDN: `n` contents, `m` servers with `d` cache
/// slots each, offered load `rho` and mean request rate per content.
///
/// Service rates are normalized to 1, so `rho = n * lambda_bar / m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub rho: f64,
    pub lambda_bar: f64,
}

impl SystemParams {
    /// Builds the parameters from the offered load; `lambda_bar` is derived.
    pub fn from_load(n: usize, m: usize, d: usize, rho: f64) -> Result<Self> {
        let params = SystemParams {
            n,
            m,
            d,
            rho,
            lambda_bar: rho * m as f64 / n.max(1) as f64,
        };
        params.validate()?;
        Ok(params)
    }

    /// Builds the parameters from the mean request rate; `rho` is derived.
    pub fn from_rate(n: usize, m: usize, d: usize, lambda_bar: f64) -> Result<Self> {
        let params = SystemParams {
            n,
            m,
            d,
            rho: n as f64 * lambda_bar / m.max(1) as f64,
            lambda_bar,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::invalid(format!(
                "n, m and d must be positive (n={}, m={}, d={})",
                self.n, self.m, self.d
            )));
        }
        if self.d > self.n {
            return Err(Error::invalid(format!(
                "a server cannot store more contents than the catalog holds (d={} > n={})",
                self.d, self.n
            )));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::invalid(format!("load must lie in (0, 1), got {}", self.rho)));
        }
        let implied = self.n as f64 * self.lambda_bar / self.m as f64;
        if (implied - self.rho).abs() > 1e-9 * self.rho {
            return Err(Error::invalid(format!(
                "rho={} inconsistent with n*lambda_bar/m={}",
                self.rho, implied
            )));
        }
        Ok(())
    }

    /// Total number of cache slots, `m * d`.
    pub fn budget(&self) -> usize {
        self.m * self.d
    }

    /// Average number of replicas per content, `m * d / n`.
    pub fn mean_replicas(&self) -> f64 {
        self.budget() as f64 / self.n as f64
    }

    /// Largest replica count allowed for one content under `cap_fraction`.
    pub fn replica_cap(&self, cap_fraction: f64) -> usize {
        replica_cap(self.m, cap_fraction)
    }
}

pub(crate) fn replica_cap(m: usize, cap_fraction: f64) -> usize {
    // the epsilon keeps 0.95 * 2000 from landing on 1899
    ((cap_fraction * m as f64) + 1e-9).floor() as usize
}

/// Per-content request rates, indexed by content id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    popularities: Vec<f64>,
}

impl Catalog {
    pub fn new(popularities: Vec<f64>) -> Result<Self> {
        if popularities.is_empty() {
            return Err(Error::invalid("catalog must contain at least one content"));
        }
        if let Some((c, l)) = popularities
            .iter()
            .enumerate()
            .find(|(_, l)| !(l.is_finite() && **l >= 0.0))
        {
            return Err(Error::invalid(format!("content {c} has invalid popularity {l}")));
        }
        if popularities.iter().all(|&l| l == 0.0) {
            return Err(Error::invalid("at least one content must have positive popularity"));
        }
        Ok(Catalog { popularities })
    }

    pub fn len(&self) -> usize {
        self.popularities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.popularities.is_empty()
    }

    pub fn popularities(&self) -> &[f64] {
        &self.popularities
    }

    pub fn rate(&self, content: usize) -> f64 {
        self.popularities[content]
    }

    pub fn total_rate(&self) -> f64 {
        self.popularities.iter().sum()
    }

    pub fn lambda_bar(&self) -> f64 {
        self.total_rate() / self.len() as f64
    }

    /// Content ids from most to least popular; ties keep id order.
    pub fn popularity_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.popularities[b].total_cmp(&self.popularities[a]).then(a.cmp(&b)));
        order
    }

    /// Multiplies every rate by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Catalog::new(self.popularities.iter().map(|l| l * factor).collect())
    }

    /// System parameters for this catalog on `m` servers with `d` slots.
    pub fn params(&self, m: usize, d: usize) -> Result<SystemParams> {
        SystemParams::from_rate(self.len(), m, d, self.lambda_bar())
    }
}

/// Zipf popularities: the content of rank `i` (1-based, id `i - 1`) gets a
/// rate proportional to `i^-alpha`, normalized so the mean rate is
/// `lambda_bar`.
pub fn zipf_catalog(n: usize, alpha: f64, lambda_bar: f64) -> Result<Catalog> {
    if n == 0 {
        return Err(Error::invalid("zipf catalog needs n >= 1"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("zipf exponent must be >= 0, got {alpha}")));
    }
    if !(lambda_bar > 0.0 && lambda_bar.is_finite()) {
        return Err(Error::invalid(format!("lambda_bar must be > 0, got {lambda_bar}")));
    }
    let weights: Vec<f64> = (1..=n).map(|i| (i as f64).powf(-alpha)).collect();
    let norm: f64 = weights.iter().sum();
    let total = n as f64 * lambda_bar;
    Catalog::new(weights.into_iter().map(|w| w / norm * total).collect())
}

/// One class of identical contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentClass {
    pub size: usize,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
}

/// A popularity model made of classes of contents sharing the same rate
/// (and optionally the same replica count).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub classes: Vec<ContentClass>,
}

impl ClassSpec {
    pub fn new(classes: Vec<ContentClass>) -> Result<Self> {
        let spec = ClassSpec { classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::invalid("class spec has no classes"));
        }
        for (i, class) in self.classes.iter().enumerate() {
            if class.size == 0 {
                return Err(Error::invalid(format!("class {i} is empty")));
            }
            if !(class.lambda > 0.0 && class.lambda.is_finite()) {
                return Err(Error::invalid(format!(
                    "class {i} popularity must be > 0, got {}",
                    class.lambda
                )));
            }
        }
        Ok(())
    }

    pub fn content_count(&self) -> usize {
        self.classes.iter().map(|c| c.size).sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.classes.iter().map(|c| c.size as f64 * c.lambda).sum()
    }

    /// Class index of every content, in catalog order.
    pub fn class_of_contents(&self) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .flat_map(|(i, c)| std::iter::repeat_n(i, c.size))
            .collect()
    }

    /// The per-class replica counts expanded to a profile, when every class
    /// carries one.
    pub fn explicit_profile(&self, params: &SystemParams, cap_fraction: f64) -> Result<Option<ReplicationProfile>> {
        if self.classes.iter().any(|c| c.replicas.is_none()) {
            return Ok(None);
        }
        let replicas = self
            .classes
            .iter()
            .flat_map(|c| std::iter::repeat_n(c.replicas.unwrap_or(0), c.size))
            .collect();
        ReplicationProfile::new(replicas, params, cap_fraction).map(Some)
    }
}

/// Expands a class spec into a catalog, class 1 first, every rate multiplied
/// by `scale`.
pub fn class_catalog(spec: &ClassSpec, scale: f64) -> Result<Catalog> {
    spec.validate()?;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::invalid(format!("scale must be > 0, got {scale}")));
    }
    let rates = spec
        .classes
        .iter()
        .flat_map(|c| std::iter::repeat_n(c.lambda * scale, c.size))
        .collect();
    Catalog::new(rates)
}

/// Integer replica counts per content. The counts always fill the cache
/// budget `m * d` exactly and respect the per-content cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationProfile {
    replicas: Vec<usize>,
    cap_fraction: f64,
}

impl ReplicationProfile {
    pub fn new(replicas: Vec<usize>, params: &SystemParams, cap_fraction: f64) -> Result<Self> {
        if replicas.len() != params.n {
            return Err(Error::invalid(format!(
                "profile has {} entries for {} contents",
                replicas.len(),
                params.n
            )));
        }
        if !(cap_fraction > 0.0 && cap_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "cap fraction must lie in (0, 1], got {cap_fraction}"
            )));
        }
        let total: usize = replicas.iter().sum();
        if total != params.budget() {
            return Err(Error::Infeasible(format!(
                "replica counts sum to {total}, cache budget is {}",
                params.budget()
            )));
        }
        let cap = params.replica_cap(cap_fraction);
        if let Some((c, &r)) = replicas.iter().enumerate().find(|(_, &r)| r > cap) {
            return Err(Error::Infeasible(format!(
                "content {c} has {r} replicas, above the cap of {cap}"
            )));
        }
        Ok(ReplicationProfile { replicas, cap_fraction })
    }

    pub fn replicas(&self) -> &[usize] {
        &self.replicas
    }

    pub fn get(&self, content: usize) -> usize {
        self.replicas[content]
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn cap_fraction(&self) -> f64 {
        self.cap_fraction
    }

    pub fn total(&self) -> usize {
        self.replicas.iter().sum()
    }
}

/// Replication proportional to popularity, clamped to the cap.
///
/// Targets `lambda_c * m * d / sum(lambda)` above the cap are pinned to it and
/// the remaining budget is spread over the other contents, repeatedly, until
/// no target exceeds the cap. The result is then rounded with
/// [`integer_budget_round`].
pub fn proportional_replication(
    catalog: &Catalog,
    params: &SystemParams,
    cap_fraction: f64,
) -> Result<ReplicationProfile> {
    check_sizes(catalog, params)?;
    let cap = params.replica_cap(cap_fraction);
    let budget = params.budget();
    if budget > catalog.len() * cap {
        return Err(Error::Infeasible(format!(
            "budget {budget} exceeds n * cap = {}",
            catalog.len() * cap
        )));
    }
    let targets = waterfill_proportional(catalog.popularities(), budget as f64, cap as f64);
    let replicas = integer_budget_round(&targets, budget)?;
    ReplicationProfile::new(replicas, params, cap_fraction)
}

fn waterfill_proportional(weights: &[f64], budget: f64, cap: f64) -> Vec<f64> {
    let n = weights.len();
    let mut clamped = vec![false; n];
    let mut targets = vec![0.0; n];
    loop {
        let pinned = clamped.iter().filter(|&&c| c).count() as f64;
        let remaining = budget - pinned * cap;
        let free_weight: f64 = (0..n).filter(|&c| !clamped[c]).map(|c| weights[c]).sum();
        let free_count = clamped.iter().filter(|&&c| !c).count() as f64;
        for c in 0..n {
            targets[c] = if clamped[c] {
                cap
            } else if free_weight > 0.0 {
                weights[c] * remaining / free_weight
            } else {
                remaining / free_count
            };
        }
        let mut changed = false;
        for c in 0..n {
            if !clamped[c] && targets[c] > cap {
                clamped[c] = true;
                changed = true;
            }
        }
        if !changed {
            return targets;
        }
    }
}

/// Rounds real targets to integers with the largest-remainder rule so that
/// the result sums to `budget` exactly. Every entry is the floor or the ceiling
/// of its target; ties go to the lower index.
pub fn integer_budget_round(targets: &[f64], budget: usize) -> Result<Vec<usize>> {
    if let Some((c, t)) = targets.iter().enumerate().find(|(_, t)| !(t.is_finite() && **t >= 0.0)) {
        return Err(Error::invalid(format!("target {c} is negative or not finite: {t}")));
    }
    let sum: f64 = targets.iter().sum();
    if (sum - budget as f64).abs() > 1e-6 * (budget as f64).max(1.0) {
        return Err(Error::invalid(format!(
            "targets sum to {sum}, expected the budget {budget}"
        )));
    }
    let mut rounded: Vec<usize> = targets.iter().map(|t| t.floor() as usize).collect();
    let floor_sum: usize = rounded.iter().sum();
    let mut remaining = budget.saturating_sub(floor_sum);
    if floor_sum > budget {
        return Err(Error::invalid("floors of the targets exceed the budget"));
    }
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in &order {
        if remaining == 0 {
            break;
        }
        if targets[c] > targets[c].floor() {
            rounded[c] += 1;
            remaining -= 1;
        }
    }
    if remaining > 0 {
        // only reachable through floating-point slack on integral targets
        for &c in order.iter().take(remaining) {
            rounded[c] += 1;
        }
    }
    Ok(rounded)
}

pub(crate) fn check_sizes(catalog: &Catalog, params: &SystemParams) -> Result<()> {
    if catalog.len() != params.n {
        return Err(Error::invalid(format!(
            "catalog has {} contents, parameters say n={}",
            catalog.len(),
            params.n
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    content_id: usize,
    lambda: f64,
    replicas: usize,
}

/// Writes `content_id,lambda,replicas` rows.
pub fn write_profile_csv(path: impl AsRef<Path>, catalog: &Catalog, profile: &ReplicationProfile) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    for (content_id, (&lambda, &replicas)) in catalog.popularities().iter().zip(profile.replicas()).enumerate() {
        writer.serialize(ProfileRow {
            content_id,
            lambda,
            replicas,
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a `content_id,lambda,replicas` file back into a catalog and the raw
/// replica counts. Rows may come in any order but ids must be `0..n`.
pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<(Catalog, Vec<usize>)> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows: Vec<ProfileRow> = reader.deserialize().collect::<Result<_, _>>()?;
    rows.sort_by_key(|r| r.content_id);
    if rows.iter().enumerate().any(|(i, r)| r.content_id != i) {
        return Err(Error::invalid(format!(
            "{}: content ids must be exactly 0..n",
            path.as_ref().display()
        )));
    }
    let catalog = Catalog::new(rows.iter().map(|r| r.lambda).collect())?;
    Ok((catalog, rows.iter().map(|r| r.replicas).collect()))
}
