//! Event loop: one aggregate Poisson arrival stream split by an alias
//! table, unit-mean exponential services, uniform matching among idle
//! replicas, and the adaptive hooks at each (virtual) loss.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Exp1};

use super::events::{EventKind, EventQueue};
use super::graph::CacheGraph;
use super::metrics::{decile_of, SimMetrics, Snapshot, DECILES};
use crate::adaptive::{AdaptiveConfig, AdaptiveState, LossKind};
use crate::error::{Error, Result};
use crate::model::{Catalog, ReplicationProfile, SystemParams};

pub const DEFAULT_WARMUP_FRACTION: f64 = 0.2;
pub const DEFAULT_CONSISTENCY_CHECK_EVERY: u64 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub adaptive: Option<AdaptiveConfig>,
    /// Interval between replication-trajectory snapshots.
    pub snapshot_every: Option<f64>,
    /// Full state verification period, in events.
    pub consistency_check_every: Option<u64>,
}

impl SimConfig {
    /// Static replication, 20% warmup, consistency sweeps in debug builds.
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimConfig {
            horizon,
            warmup: DEFAULT_WARMUP_FRACTION * horizon,
            seed,
            adaptive: None,
            snapshot_every: None,
            consistency_check_every: cfg!(debug_assertions).then_some(DEFAULT_CONSISTENCY_CHECK_EVERY),
        }
    }

    pub fn with_warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_adaptive(mut self, adaptive: AdaptiveConfig) -> Self {
        self.adaptive = Some(adaptive);
        self
    }

    pub fn with_snapshots(mut self, every: f64) -> Self {
        self.snapshot_every = Some(every);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.horizon) {
            return Err(Error::invalid(format!(
                "warmup must lie in [0, horizon), got {} for horizon {}",
                self.warmup, self.horizon
            )));
        }
        if let Some(every) = self.snapshot_every {
            if !(every.is_finite() && every > 0.0) {
                return Err(Error::invalid(format!(
                    "snapshot interval must be positive, got {every}"
                )));
            }
        }
        if let Some(a) = &self.adaptive {
            a.validate()?;
        }
        Ok(())
    }
}

/// One simulation run. Single-threaded and fully determined by the seed.
pub struct Simulation {
    config: SimConfig,
    graph: CacheGraph,
    queue: EventQueue,
    rng: ChaCha8Rng,
    sampler: WeightedAliasIndex<f64>,
    arrival_rate: f64,
    metrics: SimMetrics,
    adaptive: Option<AdaptiveState>,
    in_service: Vec<u32>,
    decile: Vec<usize>,
    decile_size: [usize; DECILES],
    now: f64,
}

impl Simulation {
    /// Builds the cache graph from `profile` with the run's generator.
    pub fn new(
        catalog: &Catalog,
        profile: &ReplicationProfile,
        params: &SystemParams,
        config: SimConfig,
    ) -> Result<Self> {
        config.validate()?;
        if catalog.len() != params.n || profile.len() != params.n {
            return Err(Error::invalid(format!(
                "catalog ({}) and profile ({}) must both have n={} contents",
                catalog.len(),
                profile.len(),
                params.n
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let graph = CacheGraph::build(profile, params, &mut rng)?;
        let mut sim = Self::assemble(catalog, graph, config, rng)?;
        let rho = params.rho;
        let threshold = 10.0 * rho / ((1.0 - rho) * (1.0 - rho));
        if (params.m as f64) < threshold {
            sim.metrics.warnings.push(format!(
                "m={} is small against 10*rho/(1-rho)^2={threshold:.0}; the mean-field regime may not apply",
                params.m
            ));
        }
        Ok(sim)
    }

    /// Runs on an explicit cache graph.
    pub fn with_graph(catalog: &Catalog, graph: CacheGraph, config: SimConfig) -> Result<Self> {
        config.validate()?;
        if catalog.len() != graph.contents() {
            return Err(Error::invalid("catalog and graph disagree on the number of contents"));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::assemble(catalog, graph, config, rng)
    }

    fn assemble(catalog: &Catalog, graph: CacheGraph, config: SimConfig, mut rng: ChaCha8Rng) -> Result<Self> {
        let n = catalog.len();
        let order = catalog.popularity_order();
        let adaptive = config.adaptive.map(|a| AdaptiveState::new(a, &order, &mut rng));
        let sampler = WeightedAliasIndex::new(catalog.popularities().to_vec())
            .map_err(|e| Error::invalid(format!("popularities cannot be sampled: {e}")))?;
        let decile = decile_of(&order);
        let mut decile_size = [0usize; DECILES];
        for &k in &decile {
            decile_size[k] += 1;
        }
        let metrics = SimMetrics::new(n, graph.servers(), config.horizon, config.warmup);
        Ok(Simulation {
            arrival_rate: catalog.total_rate(),
            queue: EventQueue::with_capacity(graph.servers() + 2),
            in_service: vec![0; n],
            graph,
            rng,
            sampler,
            metrics,
            adaptive,
            decile,
            decile_size,
            now: 0.0,
            config,
        })
    }

    pub fn graph(&self) -> &CacheGraph {
        &self.graph
    }

    pub fn metrics(&self) -> &SimMetrics {
        &self.metrics
    }

    pub fn adaptive(&self) -> Option<&AdaptiveState> {
        self.adaptive.as_ref()
    }

    /// Processes every event up to the horizon and returns the metrics.
    pub fn run(mut self) -> SimMetrics {
        let horizon = self.config.horizon;
        self.schedule_arrival();
        if let Some(every) = self.config.snapshot_every {
            self.record_snapshot();
            self.queue.push(every, EventKind::Snapshot);
        }
        let check_every = self.config.consistency_check_every.unwrap_or(0);
        while let Some((t, event)) = self.queue.pop() {
            if t > horizon {
                break;
            }
            self.now = t;
            self.metrics.events_processed += 1;
            match event {
                EventKind::Arrival { content } => {
                    self.handle_arrival(content as usize);
                    self.schedule_arrival();
                }
                EventKind::Departure { server } => self.handle_departure(server as usize),
                EventKind::Snapshot => {
                    self.record_snapshot();
                    let every = self.config.snapshot_every.expect("snapshots are configured");
                    self.queue.push(t + every, EventKind::Snapshot);
                }
            }
            if check_every > 0 && self.metrics.events_processed % check_every == 0 {
                self.verify();
            }
        }
        self.now = horizon;
        for c in 0..self.graph.contents() {
            self.accrue(c);
        }
        self.metrics.accrue_busy(horizon, self.graph.busy_count());
        if self.config.snapshot_every.is_some() && self.metrics.snapshots.last().is_some_and(|s| s.t < horizon) {
            self.record_snapshot();
        }
        self.metrics.final_replicas = self.graph.replica_counts();
        self.metrics
    }

    fn schedule_arrival(&mut self) {
        let gap: f64 = Exp1.sample(&mut self.rng);
        let content = self.sampler.sample(&mut self.rng) as u32;
        self.queue
            .push(self.now + gap / self.arrival_rate, EventKind::Arrival { content });
    }

    fn handle_arrival(&mut self, c: usize) {
        let measuring = self.metrics.measuring(self.now);
        if measuring {
            self.metrics.arrivals[c] += 1;
        }
        let z = self.graph.z(c);
        let p = match self.adaptive.as_mut() {
            Some(st) => st.virtual_probability(&self.graph, &self.in_service, c, z),
            None => 0.0,
        };
        match self.graph.pick_idle(c, &mut self.rng) {
            Some(server) => {
                self.occupy(server, c);
                let service: f64 = Exp1.sample(&mut self.rng);
                self.queue
                    .push(self.now + service, EventKind::Departure { server: server as u32 });
            }
            None => {
                if measuring {
                    self.metrics.losses[c] += 1;
                }
                self.on_loss(c, LossKind::Real);
            }
        }
        if p > 0.0 && self.rng.random::<f64>() < p {
            if measuring {
                self.metrics.virtual_losses[c] += 1;
            }
            self.on_loss(c, LossKind::Virtual);
        }
    }

    fn handle_departure(&mut self, server: usize) {
        self.metrics.accrue_busy(self.now, self.graph.busy_count());
        self.accrue_server(server);
        let c = self.graph.release(server);
        self.in_service[c] -= 1;
        if let Some(st) = self.adaptive.as_mut() {
            st.on_departure(&self.graph, &self.in_service, c);
        }
    }

    fn occupy(&mut self, server: usize, c: usize) {
        self.metrics.accrue_busy(self.now, self.graph.busy_count());
        self.accrue_server(server);
        self.graph.occupy(server, c);
        self.in_service[c] += 1;
    }

    fn on_loss(&mut self, c: usize, kind: LossKind) {
        let Some(st) = self.adaptive.as_mut() else { return };
        st.record_loss(c, self.now);
        if !st.config().adapt {
            return;
        }
        let measuring = self.metrics.measuring(self.now);
        match st.choose_victim(&self.graph, c, self.now, &mut self.rng) {
            Some(slot) => {
                let victim = self.graph.slot_content(slot);
                self.accrue(victim);
                self.accrue(c);
                self.graph.replace(slot, c);
                if measuring {
                    self.metrics.evictions[victim] += 1;
                    self.metrics.creations[c] += 1;
                    if kind == LossKind::Real {
                        self.metrics.repair_fetches += 1;
                    }
                }
            }
            None => {
                if measuring {
                    self.metrics.skipped_creations += 1;
                }
            }
        }
    }

    fn accrue(&mut self, c: usize) {
        self.metrics
            .accrue(c, self.now, self.graph.z(c), self.graph.replicas(c), self.in_service[c]);
    }

    fn accrue_server(&mut self, server: usize) {
        let d = self.graph.slots_per_server();
        for k in 0..d {
            let c = self.graph.server_contents(server)[k] as usize;
            self.accrue(c);
        }
    }

    fn record_snapshot(&mut self) {
        let mut sums = [0.0f64; DECILES];
        for c in 0..self.graph.contents() {
            sums[self.decile[c]] += self.graph.replicas(c) as f64;
        }
        let decile_mean = sums
            .iter()
            .zip(self.decile_size.iter())
            .map(|(&s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
            .collect();
        self.metrics.snapshots.push(Snapshot {
            t: self.now,
            decile_mean,
        });
    }

    fn verify(&self) {
        if let Err(e) = self.graph.check_consistency() {
            panic!("simulation state corrupted at t={}: {}", self.now, e.0);
        }
        let in_flight: u64 = self.in_service.iter().map(|&x| x as u64).sum();
        assert_eq!(
            in_flight as usize,
            self.graph.busy_count(),
            "busy servers and requests in service disagree"
        );
        assert_eq!(
            self.queue.pending_departures(),
            self.graph.busy_count(),
            "one departure per busy server"
        );
    }
}

/// Builds and runs one simulation.
pub fn run(
    catalog: &Catalog,
    profile: &ReplicationProfile,
    params: &SystemParams,
    config: SimConfig,
) -> Result<SimMetrics> {
    Ok(Simulation::new(catalog, profile, params, config)?.run())
}
