//! Statistical checks of the static loss network against independent oracles.

use edgerep::model::{proportional_replication, zipf_catalog};
use edgerep::sim::{self, SimConfig, SimMetrics};
use edgerep::{Catalog, ReplicationProfile};

/// M/M/m/m blocking probability by the standard recursion.
fn erlang_b(m: usize, a: f64) -> f64 {
    (1..=m).fold(1.0, |b, k| a * b / (k as f64 + a * b))
}

fn blocking_across_seeds(catalog: &Catalog, m: usize, d: usize, replicas: Vec<usize>, horizon: f64) -> (f64, f64) {
    let params = catalog.params(m, d).unwrap();
    let profile = ReplicationProfile::new(replicas, &params, 1.0).unwrap();
    let ratios: Vec<f64> = (0..8)
        .map(|seed| {
            let cfg = SimConfig::new(horizon, 50 + seed).with_warmup(200.0);
            sim::run(catalog, &profile, &params, cfg).unwrap().inefficiency()
        })
        .collect();
    let k = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / k;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

#[test]
fn single_content_matches_erlang_b() {
    let cat = Catalog::new(vec![4.0]).unwrap();
    let (mean, se) = blocking_across_seeds(&cat, 6, 1, vec![6], 15_000.0);
    let exact = erlang_b(6, 4.0);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
}

#[test]
fn full_storage_matches_erlang_b_for_every_content() {
    let cat = Catalog::new(vec![2.0, 2.0, 1.5]).unwrap();
    let params = cat.params(8, 3).unwrap();
    let profile = ReplicationProfile::new(vec![8, 8, 8], &params, 1.0).unwrap();
    let exact = erlang_b(8, 5.5);
    let (mean, se) = blocking_across_seeds(&cat, 8, 3, vec![8, 8, 8], 15_000.0);
    assert!((mean - exact).abs() < 4.0 * se, "{mean} vs {exact} (se {se})");
    // blocking does not depend on which content is asked for
    let m = sim::run(&cat, &profile, &params, SimConfig::new(30_000.0, 9)).unwrap();
    for c in 0..3 {
        let p = m.losses[c] as f64 / m.arrivals[c] as f64;
        assert!((p - exact).abs() < 0.02, "content {c}: {p} vs {exact}");
    }
}

fn zipf_run(seed: u64) -> (Catalog, SimMetrics) {
    let cat = zipf_catalog(50, 0.8, 4.0).unwrap();
    let params = cat.params(250, 5).unwrap();
    let prof = proportional_replication(&cat, &params, 0.95).unwrap();
    let m = sim::run(&cat, &prof, &params, SimConfig::new(5000.0, seed)).unwrap();
    (cat, m)
}

#[test]
fn arrival_counts_are_poisson_with_the_catalog_rates() {
    let (cat, m) = zipf_run(1);
    let t = m.measured();
    let chi2: f64 = (0..cat.len())
        .map(|c| {
            let e = cat.rate(c) * t;
            (m.arrivals[c] as f64 - e).powi(2) / e
        })
        .sum();
    // 50 degrees of freedom: mean 50, sd 10
    assert!(chi2 < 100.0, "chi-square {chi2}");
}

#[test]
fn busy_fraction_matches_absorbed_load() {
    let (cat, m) = zipf_run(2);
    let rho = cat.total_rate() / 250.0;
    let absorbed = rho * (1.0 - m.inefficiency());
    assert!(
        (m.busy_fraction() - absorbed).abs() < 0.01,
        "{} vs {absorbed}",
        m.busy_fraction()
    );
}

#[test]
fn requests_in_service_follow_littles_law() {
    let (cat, m) = zipf_run(3);
    let t = m.measured();
    for c in 0..cat.len() {
        if cat.rate(c) < 3.0 {
            continue;
        }
        let served = (m.arrivals[c] - m.losses[c]) as f64 / t;
        let l = m.in_service_mean(c);
        assert!((l - served).abs() < 0.06 * served, "content {c}: {l} vs {served}");
    }
}

#[test]
fn availability_histograms_are_distributions() {
    let (cat, m) = zipf_run(4);
    for c in 0..cat.len() {
        let h = m.z_distribution(c);
        let total: f64 = h.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "content {c}: {total}");
        assert!(m.z_mean(c) <= m.replicas_mean(c) + 1e-9);
    }
    assert!(m.virtual_losses.iter().all(|&v| v == 0));
    assert_eq!(m.repair_fetches, 0);
}

#[test]
fn static_runs_keep_the_profile() {
    let cat = zipf_catalog(30, 1.0, 2.0).unwrap();
    let params = cat.params(120, 4).unwrap();
    let prof = proportional_replication(&cat, &params, 0.95).unwrap();
    let m = sim::run(&cat, &prof, &params, SimConfig::new(500.0, 5)).unwrap();
    assert_eq!(m.final_replicas, prof.replicas());
    for c in 0..cat.len() {
        assert!((m.replicas_mean(c) - prof.get(c) as f64).abs() < 1e-9);
    }
}
