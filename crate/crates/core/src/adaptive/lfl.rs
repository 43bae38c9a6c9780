/// Exponentially decayed loss counts: a loss at time `s` weighs
/// `exp(-(t - s) / tau)` at time `t`. Decay is applied lazily.
#[derive(Debug, Clone, PartialEq)]
pub struct LflEstimator {
    tau: f64,
    value: Vec<f64>,
    last: Vec<f64>,
}

impl LflEstimator {
    pub fn new(n: usize, tau: f64) -> Self {
        assert!(tau > 0.0, "decay time must be positive");
        LflEstimator {
            tau,
            value: vec![0.0; n],
            last: vec![0.0; n],
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn record(&mut self, c: usize, t: f64) {
        self.value[c] = self.weight(c, t) + 1.0;
        self.last[c] = t;
    }

    /// Decayed loss count of `c` at time `t`.
    pub fn weight(&self, c: usize, t: f64) -> f64 {
        let v = self.value[c];
        if v == 0.0 {
            0.0
        } else {
            v * (-(t - self.last[c]) / self.tau).exp()
        }
    }

    /// Loss-rate estimate of `c` at time `t`.
    pub fn rate(&self, c: usize, t: f64) -> f64 {
        self.weight(c, t) / self.tau
    }
}
