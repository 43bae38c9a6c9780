//! Scenario orchestration: every (policy, seed) cell is an independent
//! single-threaded simulation; cells run on a bounded thread pool and the
//! report is assembled sequentially in config order.

use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Instance, PolicyKind, PolicySpec, ScenarioConfig};
use super::convergence::{convergence_metrics, ConvergenceSummary};
use super::output::{self, MeanFieldBrief};
use crate::adaptive::AdaptiveConfig;
use crate::error::{Error, Result};
use crate::meanfield::{availability_distribution, fixed_point_solve, FixedPointOptions, MeanFieldSolution};
use crate::model::{proportional_replication, read_profile_csv, write_profile_csv, ReplicationProfile, SystemParams};
use crate::optimizer::{optimize, OptimizerMethod, OptimizerReport};
use crate::sim::metrics::{decile_of, DECILES};
use crate::sim::{SimConfig, SimMetrics, SimSummary, Simulation};

/// Overrides applied on top of a scenario file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; defaults to the available parallelism.
    pub jobs: Option<usize>,
    /// Artifact directory; falls back to the scenario's `out`.
    pub out: Option<PathBuf>,
    pub consistency_check_every: Option<Option<u64>>,
}

/// A policy with its initial profile resolved.
#[derive(Debug, Clone)]
pub struct PreparedPolicy {
    pub label: String,
    pub spec: PolicySpec,
    pub profile: ReplicationProfile,
    pub adaptive: Option<AdaptiveConfig>,
    /// Mean-field solution of the static profile.
    pub solution: Option<MeanFieldSolution>,
    pub optimizer: Option<OptimizerReport>,
}

/// Profile of a static policy, plus the optimizer report when one was run.
pub fn static_profile(
    instance: &Instance,
    kind: &PolicyKind,
    config: Option<&ScenarioConfig>,
) -> Result<(ReplicationProfile, Option<OptimizerReport>)> {
    let (cat, params, cap) = (&instance.catalog, &instance.params, instance.cap_fraction);
    let opts = FixedPointOptions::default();
    match kind {
        PolicyKind::Proportional => Ok((proportional_replication(cat, params, cap)?, None)),
        PolicyKind::Optimized { two_pass } => {
            let rep = optimize(cat, params, cap, OptimizerMethod::ClosedForm, *two_pass, &opts)?;
            Ok((rep.profile.clone(), Some(rep)))
        }
        PolicyKind::Greedy { two_pass } => {
            let rep = optimize(cat, params, cap, OptimizerMethod::Greedy, *two_pass, &opts)?;
            Ok((rep.profile.clone(), Some(rep)))
        }
        PolicyKind::Explicit => {
            let spec = instance
                .classes
                .as_ref()
                .ok_or_else(|| Error::invalid("explicit replication needs a class instance"))?;
            let profile = spec
                .explicit_profile(params, cap)?
                .ok_or_else(|| Error::invalid("explicit replication needs replicas on every class"))?;
            Ok((profile, None))
        }
        PolicyKind::Csv { path } => {
            let path = config.map_or_else(|| path.clone(), |c| c.resolve(path));
            let (file_cat, replicas) = read_profile_csv(&path)?;
            let same = file_cat.len() == cat.len()
                && file_cat
                    .popularities()
                    .iter()
                    .zip(cat.popularities())
                    .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0));
            if !same {
                return Err(Error::invalid(format!(
                    "{}: popularities do not match the instance",
                    path.display()
                )));
            }
            Ok((ReplicationProfile::new(replicas, params, cap)?, None))
        }
        PolicyKind::Adaptive { .. } => Err(Error::invalid("adaptive policies have no static profile")),
    }
}

pub fn prepare_policy(
    instance: &Instance,
    spec: &PolicySpec,
    config: Option<&ScenarioConfig>,
) -> Result<PreparedPolicy> {
    let adaptive = spec.adaptive()?;
    let (profile, optimizer) = static_profile(instance, &spec.start_policy()?, config)?;
    let solution = if adaptive.is_none() && instance.params.d >= 2 {
        Some(fixed_point_solve(
            &instance.catalog,
            &profile,
            &instance.params,
            &FixedPointOptions::default(),
        )?)
    } else {
        None
    };
    Ok(PreparedPolicy {
        label: spec.label(),
        spec: spec.clone(),
        profile,
        adaptive,
        solution,
        optimizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Aggregate {
                mean: f64::NAN,
                sd: f64::NAN,
                count: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Aggregate { mean, sd, count: n }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub seed: u64,
    pub summary: SimSummary,
    /// Mean per-content loss rate in each popularity decile, most popular first.
    pub decile_loss_rates: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSummary>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub metrics: SimMetrics,
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyReport {
    pub label: String,
    pub policy: PolicySpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meanfield: Option<MeanFieldBrief>,
    pub runs: Vec<RunReport>,
    pub failures: Vec<CellFailure>,
    pub inefficiency: Aggregate,
    pub busy_fraction: Aggregate,
    #[serde(skip)]
    pub profile: ReplicationProfile,
    #[serde(skip)]
    pub solution: Option<MeanFieldSolution>,
}

/// One line of the class table: simulated against mean-field values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassRow {
    pub policy: String,
    pub class: usize,
    pub size: usize,
    pub lambda: f64,
    pub replicas: f64,
    pub z_mean_sim: f64,
    pub z_mean_mf: Option<f64>,
    pub gamma_sim: f64,
    pub gamma_mf: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub scenario: String,
    pub params: SystemParams,
    pub horizon: f64,
    pub warmup: f64,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyReport>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<ClassRow>,
}

impl ComparisonReport {
    pub fn failure_count(&self) -> usize {
        self.policies.iter().map(|p| p.failures.len()).sum()
    }

    pub fn policy(&self, label: &str) -> Option<&PolicyReport> {
        self.policies.iter().find(|p| p.label == label)
    }

    /// Plain-text tables: simulated / approximation side by side.
    pub fn render_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scenario {}: n={} m={} d={} rho={:.4} horizon={} warmup={} seeds={:?}",
            self.scenario, p.n, p.m, p.d, p.rho, self.horizon, self.warmup, self.seeds
        );
        for pol in &self.policies {
            let _ = writeln!(s, "\npolicy {}", pol.label);
            let mf = pol
                .meanfield
                .as_ref()
                .map_or("-".to_string(), |m| format!("{:.2}", m.inefficiency * 1e3));
            let _ = writeln!(
                s,
                "  inefficiency (x1e-3) sim / approx: {:.2} / {}   (sd {:.2}, {} runs)",
                pol.inefficiency.mean * 1e3,
                mf,
                pol.inefficiency.sd * 1e3,
                pol.inefficiency.count
            );
            let _ = writeln!(s, "  busy fraction: {:.4}", pol.busy_fraction.mean);
            let rows: Vec<&ClassRow> = self.classes.iter().filter(|r| r.policy == pol.label).collect();
            if !rows.is_empty() {
                let _ = writeln!(
                    s,
                    "  class  size  lambda   D       E[Z] sim / approx   gamma (x1e-3) sim / approx"
                );
                for r in rows {
                    let zm = r.z_mean_mf.map_or("-".into(), |v| format!("{v:.2}"));
                    let gm = r.gamma_mf.map_or("-".into(), |v| format!("{:.2}", v * 1e3));
                    let _ = writeln!(
                        s,
                        "  {:<5}  {:<4}  {:<7.3}  {:<6.1}  {:.2} / {:<10}  {:.2} / {}",
                        r.class,
                        r.size,
                        r.lambda,
                        r.replicas,
                        r.z_mean_sim,
                        zm,
                        r.gamma_sim * 1e3,
                        gm
                    );
                }
            }
            for run in &pol.runs {
                if let Some(c) = &run.convergence {
                    let _ = writeln!(
                        s,
                        "  seed {}: time to 90% of final replication, top / bottom decile: {} / {}",
                        run.seed, c.top_time_to_90, c.bottom_time_to_90
                    );
                }
            }
            for f in &pol.failures {
                let _ = writeln!(s, "  seed {} FAILED: {}", f.seed, f.error);
            }
        }
        s
    }

    /// Writes every artifact under `dir`. Wall-clock times go to
    /// `timing.json` only, so all other files are reproducible byte for byte.
    pub fn write(&self, dir: &Path, instance: &Instance) -> Result<()> {
        output::ensure_dir(dir)?;
        output::write_json(&dir.join("report.json"), self)?;
        output::write_text(&dir.join("report.txt"), &self.render_text())?;
        let mut cmp = csv::Writer::from_path(dir.join("comparison.csv"))?;
        cmp.write_record([
            "policy",
            "seed",
            "inefficiency",
            "busy_fraction",
            "arrivals",
            "losses",
            "virtual_losses",
            "events_processed",
        ])?;
        let mut agg = csv::Writer::from_path(dir.join("aggregate.csv"))?;
        agg.write_record([
            "policy",
            "runs",
            "inefficiency_mean",
            "inefficiency_sd",
            "busy_fraction_mean",
            "busy_fraction_sd",
            "meanfield_inefficiency",
        ])?;
        let mut timing = Vec::new();
        for pol in &self.policies {
            let pdir = dir.join(&pol.label);
            output::ensure_dir(&pdir)?;
            write_profile_csv(pdir.join("profile.csv"), &instance.catalog, &pol.profile)?;
            if let Some(sol) = &pol.solution {
                output::write_meanfield_csv(&pdir.join("meanfield.csv"), &instance.catalog, &pol.profile, sol)?;
            }
            agg.serialize((
                &pol.label,
                pol.inefficiency.count,
                pol.inefficiency.mean,
                pol.inefficiency.sd,
                pol.busy_fraction.mean,
                pol.busy_fraction.sd,
                pol.meanfield.as_ref().map(|m| m.inefficiency),
            ))?;
            for run in &pol.runs {
                let m = &run.metrics;
                cmp.serialize((
                    &pol.label,
                    run.seed,
                    run.summary.inefficiency,
                    run.summary.busy_fraction,
                    run.summary.arrivals,
                    run.summary.losses,
                    run.summary.virtual_losses,
                    run.summary.events_processed,
                ))?;
                let rdir = pdir.join(format!("seed-{}", run.seed));
                write_run_artifacts(
                    &rdir,
                    instance,
                    m,
                    run.convergence.as_ref(),
                    pol.policy.adaptive()?.is_some(),
                )?;
                timing.push(serde_json::json!({
                    "policy": pol.label,
                    "seed": run.seed,
                    "wall_time": run.wall_time,
                }));
            }
        }
        cmp.flush().map_err(|e| Error::io(dir.join("comparison.csv"), e))?;
        agg.flush().map_err(|e| Error::io(dir.join("aggregate.csv"), e))?;
        if !self.classes.is_empty() {
            let mut w = csv::Writer::from_path(dir.join("classes.csv"))?;
            for r in &self.classes {
                w.serialize(r)?;
            }
            w.flush().map_err(|e| Error::io(dir.join("classes.csv"), e))?;
        }
        output::write_json(&dir.join("timing.json"), &timing)
    }
}

/// Per-run files: `contents.csv`, `z_hist.csv`, `summary.json`, plus
/// `trajectory.csv`, `final_state.csv` and `convergence.json` when relevant.
pub fn write_run_artifacts(
    dir: &Path,
    instance: &Instance,
    m: &SimMetrics,
    convergence: Option<&ConvergenceSummary>,
    adaptive: bool,
) -> Result<()> {
    output::ensure_dir(dir)?;
    output::write_contents_csv(&dir.join("contents.csv"), &instance.catalog, m)?;
    output::write_z_hist_csv(&dir.join("z_hist.csv"), m)?;
    output::write_json(&dir.join("summary.json"), &m.summary())?;
    if !m.snapshots.is_empty() {
        output::write_trajectory_csv(&dir.join("trajectory.csv"), m)?;
    }
    if adaptive {
        output::write_final_state_csv(&dir.join("final_state.csv"), &instance.catalog, m)?;
    }
    if let Some(c) = convergence {
        output::write_json(&dir.join("convergence.json"), c)?;
    }
    Ok(())
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "simulation panicked".into()
    }
}

fn run_cell(
    instance: &Instance,
    policy: &PreparedPolicy,
    cfg: SimConfig,
) -> std::result::Result<(SimMetrics, f64), String> {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        Simulation::new(&instance.catalog, &policy.profile, &instance.params, cfg).map(Simulation::run)
    }));
    match outcome {
        Ok(Ok(m)) => Ok((m, start.elapsed().as_secs_f64())),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(panic_message(p)),
    }
}

fn decile_loss_rates(instance: &Instance, m: &SimMetrics) -> Vec<f64> {
    let decile = decile_of(&instance.catalog.popularity_order());
    let mut sum = [0.0; DECILES];
    let mut count = [0usize; DECILES];
    for (c, &k) in decile.iter().enumerate() {
        sum[k] += m.loss_rate(c);
        count[k] += 1;
    }
    sum.iter()
        .zip(count.iter())
        .map(|(&s, &k)| if k == 0 { 0.0 } else { s / k as f64 })
        .collect()
}

fn class_rows(instance: &Instance, pol: &PolicyReport) -> Vec<ClassRow> {
    let Some(spec) = &instance.classes else {
        return Vec::new();
    };
    let class_of = spec.class_of_contents();
    let theta = pol.solution.as_ref().map(|s| s.effective.theta_eff);
    spec.classes
        .iter()
        .enumerate()
        .map(|(i, class)| {
            let members: Vec<usize> = (0..class_of.len()).filter(|&c| class_of[c] == i).collect();
            let k = members.len() as f64;
            let lambda = instance.catalog.rate(members[0]);
            let replicas = members.iter().map(|&c| pol.profile.get(c) as f64).sum::<f64>() / k;
            let runs = pol.runs.len().max(1) as f64;
            let z_mean_sim = pol
                .runs
                .iter()
                .map(|r| members.iter().map(|&c| r.metrics.z_mean(c)).sum::<f64>() / k)
                .sum::<f64>()
                / runs;
            let gamma_sim = pol
                .runs
                .iter()
                .map(|r| members.iter().map(|&c| r.metrics.loss_rate(c)).sum::<f64>() / k)
                .sum::<f64>()
                / runs;
            let z_mean_mf = theta.map(|th| {
                members
                    .iter()
                    .map(|&c| availability_distribution(c, instance.catalog.rate(c), pol.profile.get(c), th).mean)
                    .sum::<f64>()
                    / k
            });
            let gamma_mf = pol
                .solution
                .as_ref()
                .map(|s| members.iter().map(|&c| s.gamma[c]).sum::<f64>() / k);
            ClassRow {
                policy: pol.label.clone(),
                class: i + 1,
                size: class.size,
                lambda,
                replicas,
                z_mean_sim,
                z_mean_mf,
                gamma_sim,
                gamma_mf,
            }
        })
        .collect()
}

/// Runs every (policy, seed) cell of a scenario and assembles the report.
/// Artifacts are written when an output directory is configured. Cell
/// failures are recorded in the report; setup errors are returned.
pub fn run_scenario(config: &ScenarioConfig, opts: &RunOptions) -> Result<(ComparisonReport, Instance)> {
    config.validate()?;
    let instance = config.instance.build()?;
    let policies: Vec<PreparedPolicy> = config
        .policies
        .iter()
        .map(|p| prepare_policy(&instance, p, Some(config)))
        .collect::<Result<_>>()?;
    let warmup = config.warmup();
    let cells: Vec<(usize, u64)> = (0..policies.len())
        .flat_map(|p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let make_cfg = |p: &PreparedPolicy, seed: u64| {
        let mut cfg = SimConfig::new(config.horizon, seed).with_warmup(warmup);
        cfg.adaptive = p.adaptive;
        cfg.snapshot_every = config.snapshot_every;
        if let Some(check) = opts.consistency_check_every {
            cfg.consistency_check_every = check;
        }
        cfg
    };
    let jobs = opts
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<std::result::Result<(SimMetrics, f64), String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(p, seed)| run_cell(&instance, &policies[p], make_cfg(&policies[p], seed)))
            .collect()
    });

    let mut reports: Vec<PolicyReport> = Vec::with_capacity(policies.len());
    let mut results = results.into_iter();
    for pol in &policies {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for &seed in &config.seeds {
            match results.next().expect("one result per cell") {
                Ok((metrics, wall_time)) => {
                    let convergence = if pol.adaptive.is_some() && metrics.snapshots.len() >= 2 {
                        Some(convergence_metrics(&metrics.snapshots)?)
                    } else {
                        None
                    };
                    runs.push(RunReport {
                        seed,
                        summary: metrics.summary(),
                        decile_loss_rates: decile_loss_rates(&instance, &metrics),
                        convergence,
                        warnings: metrics.warnings.clone(),
                        metrics,
                        wall_time,
                    });
                }
                Err(error) => failures.push(CellFailure { seed, error }),
            }
        }
        let ineff: Vec<f64> = runs.iter().map(|r| r.summary.inefficiency).collect();
        let busy: Vec<f64> = runs.iter().map(|r| r.summary.busy_fraction).collect();
        reports.push(PolicyReport {
            label: pol.label.clone(),
            policy: pol.spec.clone(),
            meanfield: pol.solution.as_ref().map(MeanFieldBrief::from),
            runs,
            failures,
            inefficiency: Aggregate::of(&ineff),
            busy_fraction: Aggregate::of(&busy),
            profile: pol.profile.clone(),
            solution: pol.solution.clone(),
        });
    }
    let classes = reports.iter().flat_map(|p| class_rows(&instance, p)).collect();
    let report = ComparisonReport {
        scenario: config.name(),
        params: instance.params,
        horizon: config.horizon,
        warmup,
        seeds: config.seeds.clone(),
        policies: reports,
        classes,
    };
    let out = opts.out.clone().or_else(|| config.out.clone());
    if let Some(dir) = out {
        report.write(&dir, &instance)?;
    }
    Ok((report, instance))
}
