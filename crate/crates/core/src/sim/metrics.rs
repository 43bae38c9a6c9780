use serde::Serialize;

/// Number of popularity groups used for replication trajectories.
pub const DECILES: usize = 10;

/// Per-decile mean replica counts at one instant. Decile 0 holds the most
/// popular contents.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub decile_mean: Vec<f64>,
}

/// Counters and time integrals of one run. Everything except the
/// trajectory and the final replica counts only covers `[warmup, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimMetrics {
    pub horizon: f64,
    pub warmup: f64,
    pub servers: usize,
    pub arrivals: Vec<u64>,
    pub losses: Vec<u64>,
    pub virtual_losses: Vec<u64>,
    pub evictions: Vec<u64>,
    pub creations: Vec<u64>,
    /// `z_time[c][z]`: time spent with `Z_c = z`.
    pub z_time: Vec<Vec<f64>>,
    pub replica_time: Vec<f64>,
    /// Integral of the number of requests for `c` in service.
    pub service_time: Vec<f64>,
    pub busy_time: f64,
    pub events_processed: u64,
    pub repair_fetches: u64,
    pub skipped_creations: u64,
    pub snapshots: Vec<Snapshot>,
    pub final_replicas: Vec<usize>,
    pub warnings: Vec<String>,
    last: Vec<f64>,
    busy_last: f64,
}

/// Headline numbers of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub inefficiency: f64,
    pub busy_fraction: f64,
    pub events_processed: u64,
    pub arrivals: u64,
    pub losses: u64,
    pub virtual_losses: u64,
    pub repair_fetches: u64,
    pub skipped_creations: u64,
}

impl SimMetrics {
    pub fn new(n: usize, servers: usize, horizon: f64, warmup: f64) -> Self {
        SimMetrics {
            horizon,
            warmup,
            servers,
            arrivals: vec![0; n],
            losses: vec![0; n],
            virtual_losses: vec![0; n],
            evictions: vec![0; n],
            creations: vec![0; n],
            z_time: vec![Vec::new(); n],
            replica_time: vec![0.0; n],
            service_time: vec![0.0; n],
            busy_time: 0.0,
            events_processed: 0,
            repair_fetches: 0,
            skipped_creations: 0,
            snapshots: Vec::new(),
            final_replicas: Vec::new(),
            warnings: Vec::new(),
            last: vec![0.0; n],
            busy_last: 0.0,
        }
    }

    pub fn contents(&self) -> usize {
        self.arrivals.len()
    }

    /// Length of the measured interval.
    pub fn measured(&self) -> f64 {
        self.horizon - self.warmup
    }

    pub fn measuring(&self, t: f64) -> bool {
        t >= self.warmup
    }

    /// Credits the state content `c` held since its last change, up to `now`.
    pub fn accrue(&mut self, c: usize, now: f64, z: usize, replicas: usize, in_service: u32) {
        let from = self.last[c].max(self.warmup);
        if now > from {
            let dt = now - from;
            let hist = &mut self.z_time[c];
            if hist.len() <= z {
                hist.resize(z + 1, 0.0);
            }
            hist[z] += dt;
            self.replica_time[c] += dt * replicas as f64;
            self.service_time[c] += dt * in_service as f64;
        }
        self.last[c] = now;
    }

    pub fn accrue_busy(&mut self, now: f64, busy: usize) {
        let from = self.busy_last.max(self.warmup);
        if now > from {
            self.busy_time += (now - from) * busy as f64;
        }
        self.busy_last = now;
    }

    pub fn total_arrivals(&self) -> u64 {
        self.arrivals.iter().sum()
    }

    pub fn total_losses(&self) -> u64 {
        self.losses.iter().sum()
    }

    /// Fraction of requests lost, `sum losses / sum arrivals`.
    pub fn inefficiency(&self) -> f64 {
        let a = self.total_arrivals();
        if a == 0 {
            0.0
        } else {
            self.total_losses() as f64 / a as f64
        }
    }

    pub fn busy_fraction(&self) -> f64 {
        self.busy_time / (self.servers as f64 * self.measured())
    }

    /// Empirical loss rate of `c` per unit time.
    pub fn loss_rate(&self, c: usize) -> f64 {
        self.losses[c] as f64 / self.measured()
    }

    pub fn virtual_loss_rate(&self, c: usize) -> f64 {
        self.virtual_losses[c] as f64 / self.measured()
    }

    /// Time-average of `Z_c`.
    pub fn z_mean(&self, c: usize) -> f64 {
        let t = self.measured();
        self.z_time[c]
            .iter()
            .enumerate()
            .map(|(z, &w)| z as f64 * w)
            .sum::<f64>()
            / t
    }

    /// Time-weighted distribution of `Z_c`.
    pub fn z_distribution(&self, c: usize) -> Vec<f64> {
        let t = self.measured();
        self.z_time[c].iter().map(|w| w / t).collect()
    }

    pub fn replicas_mean(&self, c: usize) -> f64 {
        self.replica_time[c] / self.measured()
    }

    /// Time-average number of requests for `c` in service.
    pub fn in_service_mean(&self, c: usize) -> f64 {
        self.service_time[c] / self.measured()
    }

    pub fn summary(&self) -> SimSummary {
        SimSummary {
            inefficiency: self.inefficiency(),
            busy_fraction: self.busy_fraction(),
            events_processed: self.events_processed,
            arrivals: self.total_arrivals(),
            losses: self.total_losses(),
            virtual_losses: self.virtual_losses.iter().sum(),
            repair_fetches: self.repair_fetches,
            skipped_creations: self.skipped_creations,
        }
    }
}

/// Decile of each content by popularity rank (0 = most popular).
pub fn decile_of(order: &[usize]) -> Vec<usize> {
    let n = order.len();
    let mut out = vec![0; n];
    for (rank, &c) in order.iter().enumerate() {
        out[c] = rank * DECILES / n.max(1);
    }
    out
}
