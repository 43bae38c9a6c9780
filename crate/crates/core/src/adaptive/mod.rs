//! Loss-driven replica management.
//!
//! At every loss of content `c` a coordinator evicts a victim content from
//! an idle server and stores a copy of `c` in its place. Virtual losses
//! trigger the same action at a rate proportional to the real loss rate,
//! without losing the request.

pub mod lfl;
pub mod lrl;
pub mod virtual_loss;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::sim::CacheGraph;

pub use lfl::LflEstimator;
pub use lrl::LrlList;
pub use virtual_loss::{q_factor, virtual_loss_probability, z_star, OnlineEstimates};

pub const DEFAULT_LFL_TAU: f64 = 500.0;
pub const DEFAULT_MIN_Z_STAR_CONTENTS: usize = 10;
/// Victim candidates tried before a creation is skipped.
pub const VICTIM_ATTEMPTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum EvictionRule {
    Random,
    Lrl,
    Lfl { tau: f64 },
}

impl EvictionRule {
    pub fn name(&self) -> &'static str {
        match self {
            EvictionRule::Random => "random",
            EvictionRule::Lrl => "lrl",
            EvictionRule::Lfl { .. } => "lfl",
        }
    }
}

impl fmt::Display for EvictionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvictionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "random" => Ok(EvictionRule::Random),
            "lrl" => Ok(EvictionRule::Lrl),
            "lfl" => Ok(EvictionRule::Lfl { tau: DEFAULT_LFL_TAU }),
            other => Err(Error::invalid(format!("unknown eviction rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossKind {
    Real,
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub rule: EvictionRule,
    pub virtual_losses: bool,
    /// When false, losses are counted but replicas never move.
    pub adapt: bool,
    /// Only evict contents lost less recently than the one being added.
    pub lrl_restricted: bool,
    /// Number of least popular contents averaged for the min-z* estimate.
    pub min_z_star_contents: usize,
}

impl AdaptiveConfig {
    pub fn new(rule: EvictionRule, virtual_losses: bool) -> Self {
        AdaptiveConfig {
            rule,
            virtual_losses,
            adapt: true,
            lrl_restricted: false,
            min_z_star_contents: DEFAULT_MIN_Z_STAR_CONTENTS,
        }
    }

    /// Counts virtual losses on a fixed replication.
    pub fn frozen_virtual() -> Self {
        AdaptiveConfig {
            adapt: false,
            ..Self::new(EvictionRule::Random, true)
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if let EvictionRule::Lfl { tau } = self.rule {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::invalid(format!("LFL decay time must be positive, got {tau}")));
            }
        }
        if self.virtual_losses && self.min_z_star_contents == 0 {
            return Err(Error::invalid("min-z* estimate needs at least one content"));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        if self.virtual_losses {
            format!("{}+virtual", self.rule)
        } else {
            self.rule.to_string()
        }
    }
}

/// Coordinator state owned by a simulation run.
#[derive(Debug, Clone)]
pub struct AdaptiveState {
    config: AdaptiveConfig,
    lrl: LrlList,
    lfl: Option<LflEstimator>,
    tracked: Vec<usize>,
    is_tracked: Vec<bool>,
    min_z_star: Option<f64>,
    tried: Vec<usize>,
}

impl AdaptiveState {
    /// `popularity_order` lists contents from most to least popular. The
    /// initial LRL order is a seeded shuffle.
    pub fn new<R: Rng + ?Sized>(config: AdaptiveConfig, popularity_order: &[usize], rng: &mut R) -> Self {
        let n = popularity_order.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let k = config.min_z_star_contents.min(n);
        let tracked: Vec<usize> = popularity_order[n - k..].to_vec();
        let mut is_tracked = vec![false; n];
        for &c in &tracked {
            is_tracked[c] = true;
        }
        AdaptiveState {
            config,
            lrl: LrlList::new(&order),
            lfl: match config.rule {
                EvictionRule::Lfl { tau } => Some(LflEstimator::new(n, tau)),
                _ => None,
            },
            tracked,
            is_tracked,
            min_z_star: None,
            tried: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdaptiveConfig {
        &self.config
    }

    pub fn lrl(&self) -> &LrlList {
        &self.lrl
    }

    pub fn lfl(&self) -> Option<&LflEstimator> {
        self.lfl.as_ref()
    }

    /// Current min-z* estimate, if one is available.
    pub fn min_z_star(&self) -> Option<f64> {
        self.min_z_star
    }

    /// Probability of a virtual loss for a request for `c` that found `z`
    /// available replicas, from the current occupancy.
    pub fn virtual_probability(&mut self, graph: &CacheGraph, in_service: &[u32], c: usize, z: usize) -> f64 {
        if !self.config.virtual_losses || z == 0 {
            return 0.0;
        }
        let est = OnlineEstimates::from_occupancy(graph.busy_count(), graph.servers(), graph.slots_per_server());
        if !est.usable() {
            return 0.0;
        }
        if self.min_z_star.is_none() {
            self.refresh_min_z_star(graph, in_service);
        }
        let Some(min) = self.min_z_star else { return 0.0 };
        virtual_loss_probability(in_service[c] as f64, graph.replicas(c), z, est.theta_eff, min)
    }

    /// Called when a request for `c` completes service.
    pub fn on_departure(&mut self, graph: &CacheGraph, in_service: &[u32], c: usize) {
        if self.config.virtual_losses && self.is_tracked[c] {
            self.refresh_min_z_star(graph, in_service);
        }
    }

    fn refresh_min_z_star(&mut self, graph: &CacheGraph, in_service: &[u32]) {
        let est = OnlineEstimates::from_occupancy(graph.busy_count(), graph.servers(), graph.slots_per_server());
        if !est.usable() {
            self.min_z_star = None;
            return;
        }
        let sum: f64 = self
            .tracked
            .iter()
            .map(|&c| z_star(in_service[c] as f64, graph.replicas(c), est.theta_eff))
            .sum();
        let mean = sum / self.tracked.len() as f64;
        self.min_z_star = (mean > 0.0).then_some(mean);
    }

    /// Bookkeeping for a (real or virtual) loss of `c` at time `now`.
    pub fn record_loss(&mut self, c: usize, now: f64) {
        self.lrl.touch(c);
        if let Some(lfl) = self.lfl.as_mut() {
            lfl.record(c, now);
        }
    }

    /// Picks an idle slot whose content is evicted to make room for `c`,
    /// or `None` when no eligible victim is found.
    pub fn choose_victim<R: Rng + ?Sized>(
        &mut self,
        graph: &CacheGraph,
        c: usize,
        now: f64,
        rng: &mut R,
    ) -> Option<usize> {
        self.tried.clear();
        for _ in 0..VICTIM_ATTEMPTS {
            let victim = self.candidate(graph, c, now, rng)?;
            self.tried.push(victim);
            if let Some(slot) = eligible_slot(graph, victim, c, rng) {
                return Some(slot);
            }
        }
        None
    }

    fn candidate<R: Rng + ?Sized>(&self, graph: &CacheGraph, c: usize, now: f64, rng: &mut R) -> Option<usize> {
        let avail = graph.available();
        match self.config.rule {
            EvictionRule::Random => {
                let len = avail.len();
                let own = avail.contains(c) as usize;
                if len <= own {
                    return None;
                }
                loop {
                    let v = avail.get(rng.random_range(0..len));
                    if v != c {
                        return Some(v);
                    }
                }
            }
            EvictionRule::Lrl => {
                let restricted = self.config.lrl_restricted;
                self.lrl
                    .iter()
                    .take_while(|&v| !(restricted && v == c))
                    .find(|&v| v != c && avail.contains(v) && !self.tried.contains(&v))
            }
            EvictionRule::Lfl { .. } => {
                let lfl = self.lfl.as_ref().expect("LFL estimator exists for the LFL rule");
                let mut best = f64::INFINITY;
                let mut pick = None;
                let mut ties = 0u32;
                for v in avail.iter() {
                    if v == c || self.tried.contains(&v) {
                        continue;
                    }
                    let w = lfl.weight(v, now);
                    if w < best {
                        best = w;
                        pick = Some(v);
                        ties = 1;
                    } else if w == best {
                        ties += 1;
                        if rng.random_range(0..ties) == 0 {
                            pick = Some(v);
                        }
                    }
                }
                pick
            }
        }
    }
}

/// Uniformly random idle slot of `victim` on a server that does not store
/// `c`: a few rejection draws, then an exhaustive scan.
fn eligible_slot<R: Rng + ?Sized>(graph: &CacheGraph, victim: usize, c: usize, rng: &mut R) -> Option<usize> {
    let slots = graph.idle_slots(victim);
    if slots.is_empty() {
        return None;
    }
    for _ in 0..8 {
        let slot = slots[rng.random_range(0..slots.len())] as usize;
        if !graph.server_stores(graph.slot_server(slot), c) {
            return Some(slot);
        }
    }
    let ok: Vec<usize> = slots
        .iter()
        .map(|&s| s as usize)
        .filter(|&s| !graph.server_stores(graph.slot_server(s), c))
        .collect();
    if ok.is_empty() {
        None
    } else {
        Some(ok[rng.random_range(0..ok.len())])
    }
}
