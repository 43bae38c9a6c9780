use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use edgerep::adaptive::{AdaptiveConfig, EvictionRule};
use edgerep::harness::output::{self, MeanFieldBrief};
use edgerep::harness::{
    convergence_metrics, preset, preset_names, preset_source, run_scenario, static_profile, write_run_artifacts,
    Instance, PolicyKind, RunOptions, ScenarioConfig,
};
use edgerep::meanfield::{fixed_point_solve, FixedPointOptions, LossModel};
use edgerep::model::write_profile_csv;
use edgerep::optimizer::{optimize, OptimizerMethod};
use edgerep::sim::{SimConfig, Simulation};
use edgerep::{Error, ReplicationProfile};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edgerep",
    version,
    about = "Content replication in edge-assisted CDNs: mean-field analysis and loss-network simulation"
)]
struct Cli {
    /// Seed for the run (replaces the seed list of a scenario).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum number of simulations running at once.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossModelArg {
    Exact,
    ClosedForm,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    ClosedForm,
    Greedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Random,
    Lrl,
    Lfl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field fixed point for a static replication.
    Meanfield {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Label of the static policy to analyze (default: the first one).
        #[arg(long)]
        policy: Option<String>,
        /// Per-content loss used in the fixed point.
        #[arg(long, value_enum, default_value = "exact")]
        loss_model: LossModelArg,
    },
    /// Compute the optimized static replication.
    Optimize {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Optimizer producing the profile.
        #[arg(long, value_enum, default_value = "closed-form")]
        method: MethodArg,
        /// Re-solve the fixed point at the optimized profile and redo it once.
        #[arg(long)]
        two_pass: bool,
    },
    /// Simulate one static replication.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Label of the static policy to simulate (default: the first one).
        #[arg(long)]
        policy: Option<String>,
        /// Simulated time (replaces the scenario horizon).
        #[arg(long)]
        horizon: Option<f64>,
        /// Time before statistics are collected.
        #[arg(long)]
        warmup: Option<f64>,
    },
    /// Simulate an adaptive replication scheme.
    Adaptive {
        /// Scenario file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Eviction rule applied at every loss.
        #[arg(long, value_enum, default_value = "lrl")]
        rule: RuleArg,
        /// Also adapt on virtual losses sampled from served requests with few idle replicas.
        #[arg(long = "virtual", value_enum, default_value = "off")]
        virtual_losses: Switch,
        /// Decay time of the LFL estimator.
        #[arg(long, default_value_t = edgerep::adaptive::DEFAULT_LFL_TAU)]
        tau: f64,
        /// Interval between replication snapshots.
        #[arg(long, default_value_t = 100.0)]
        snapshot_every: f64,
        /// Simulated time (replaces the scenario horizon).
        #[arg(long)]
        horizon: Option<f64>,
        /// Time before statistics are collected.
        #[arg(long)]
        warmup: Option<f64>,
        /// Only evict contents lost less recently than the one being added.
        #[arg(long)]
        lrl_restricted: bool,
    },
    /// Run a shipped preset and print its comparison tables.
    Reproduce {
        /// One of the preset names (see `edgerep presets`).
        preset: String,
        /// Simulated time (replaces the scenario horizon).
        #[arg(long)]
        horizon: Option<f64>,
        /// Print the preset file instead of running it.
        #[arg(long)]
        show: bool,
    },
    /// Run every (policy, seed) cell of a scenario file.
    Compare {
        /// Scenario file (TOML).
        config: PathBuf,
    },
    /// List the shipped presets.
    Presets,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUN },
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load(path: &Path, seed: Option<u64>) -> CliResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig::from_file(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn out_dir(cli_out: &Option<PathBuf>, cfg: &ScenarioConfig, fallback: &str) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(fallback))
}

/// Static policy chosen by label, or the first static one.
fn pick_static(cfg: &ScenarioConfig, label: Option<&str>) -> CliResult<PolicyKind> {
    let found = match label {
        Some(l) => cfg.policies.iter().find(|p| p.label() == l),
        None => cfg
            .policies
            .iter()
            .find(|p| !matches!(p.kind, PolicyKind::Adaptive { .. })),
    };
    match found {
        Some(p) => Ok(p.start_policy()?),
        None if label.is_none() => Ok(PolicyKind::Proportional),
        None => Err(Error::InvalidParameter(format!("no policy labelled '{}'", label.unwrap_or_default())).into()),
    }
}

fn profile_for(cfg: &ScenarioConfig, instance: &Instance, label: Option<&str>) -> CliResult<ReplicationProfile> {
    let kind = pick_static(cfg, label)?;
    Ok(static_profile(instance, &kind, Some(cfg))?.0)
}

fn cmd_meanfield(cli: &Cli, config: &Path, policy: Option<&str>, model: LossModelArg) -> CliResult<()> {
    let cfg = load(config, cli.seed)?;
    let instance = cfg.instance.build()?;
    let profile = profile_for(&cfg, &instance, policy)?;
    let opts = FixedPointOptions {
        loss_model: match model {
            LossModelArg::Exact => LossModel::Exact,
            LossModelArg::ClosedForm => LossModel::ClosedForm,
        },
        ..FixedPointOptions::default()
    };
    let sol = fixed_point_solve(&instance.catalog, &profile, &instance.params, &opts)?;
    let dir = out_dir(&cli.out, &cfg, "meanfield");
    output::ensure_dir(&dir)?;
    output::write_meanfield_csv(&dir.join("meanfield.csv"), &instance.catalog, &profile, &sol)?;
    let brief = MeanFieldBrief::from(&sol);
    output::write_json(&dir.join("meanfield.json"), &brief)?;
    println!(
        "gamma_bar={:.6e} inefficiency={:.6e} theta_eff={:.6} rho_eff={:.6} iterations={} residual={:.3e}",
        brief.gamma_bar, brief.inefficiency, brief.theta_eff, brief.rho_eff, brief.iterations, brief.residual
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_optimize(cli: &Cli, config: &Path, method: MethodArg, two_pass: bool) -> CliResult<()> {
    let cfg = load(config, cli.seed)?;
    let instance = cfg.instance.build()?;
    let method = match method {
        MethodArg::ClosedForm => OptimizerMethod::ClosedForm,
        MethodArg::Greedy => OptimizerMethod::Greedy,
    };
    let rep = optimize(
        &instance.catalog,
        &instance.params,
        instance.cap_fraction,
        method,
        two_pass,
        &FixedPointOptions::default(),
    )?;
    let dir = out_dir(&cli.out, &cfg, "optimize");
    output::ensure_dir(&dir)?;
    write_profile_csv(dir.join("profile.csv"), &instance.catalog, &rep.profile)?;
    let summary = json!({
        "gamma_bar_predicted": rep.gamma_bar_predicted,
        "coefficient": rep.coefficient,
        "Dbar": rep.mean_replicas,
        "theta_eff": rep.theta_eff,
        "method": rep.method.to_string(),
    });
    output::write_json(&dir.join("optimize.json"), &summary)?;
    let r = rep.profile.replicas();
    println!(
        "method={} theta_eff={:.6} coefficient={:.6} Dbar={} predicted inefficiency={:.6e} replicas: max={} min={}",
        rep.method,
        rep.theta_eff,
        rep.coefficient,
        rep.mean_replicas,
        rep.gamma_bar_predicted / instance.params.lambda_bar,
        r.iter().max().unwrap_or(&0),
        r.iter().min().unwrap_or(&0)
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn sim_config(cfg: &ScenarioConfig, seed: Option<u64>, horizon: Option<f64>, warmup: Option<f64>) -> SimConfig {
    let horizon = horizon.unwrap_or(cfg.horizon);
    let warmup = warmup.unwrap_or(if horizon == cfg.horizon {
        cfg.warmup()
    } else {
        edgerep::sim::engine::DEFAULT_WARMUP_FRACTION * horizon
    });
    SimConfig::new(horizon, seed.unwrap_or(cfg.seeds[0])).with_warmup(warmup)
}

fn finish_run(dir: &Path, instance: &Instance, sim: Simulation, adaptive: bool) -> CliResult<()> {
    let start = Instant::now();
    let m = sim.run();
    let wall = start.elapsed().as_secs_f64();
    let convergence = if adaptive && m.snapshots.len() >= 2 {
        Some(convergence_metrics(&m.snapshots)?)
    } else {
        None
    };
    write_run_artifacts(dir, instance, &m, convergence.as_ref(), adaptive)?;
    output::write_json(&dir.join("timing.json"), &json!({ "wall_time": wall }))?;
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    let s = m.summary();
    println!(
        "inefficiency={:.6e} busy_fraction={:.6} events_processed={} wall_time={:.2}s",
        s.inefficiency, s.busy_fraction, s.events_processed, wall
    );
    if let Some(c) = convergence {
        println!(
            "time to 90% of final replication: top decile {} / bottom decile {}",
            c.top_time_to_90, c.bottom_time_to_90
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_simulate(
    cli: &Cli,
    config: &Path,
    policy: Option<&str>,
    horizon: Option<f64>,
    warmup: Option<f64>,
) -> CliResult<()> {
    let cfg = load(config, None)?;
    let instance = cfg.instance.build()?;
    let profile = profile_for(&cfg, &instance, policy)?;
    let sc = sim_config(&cfg, cli.seed, horizon, warmup);
    let sim = Simulation::new(&instance.catalog, &profile, &instance.params, sc)?;
    finish_run(&out_dir(&cli.out, &cfg, "simulate"), &instance, sim, false)
}

#[allow(clippy::too_many_arguments)]
fn cmd_adaptive(
    cli: &Cli,
    config: &Path,
    rule: RuleArg,
    virtual_losses: Switch,
    tau: f64,
    snapshot_every: f64,
    horizon: Option<f64>,
    warmup: Option<f64>,
    lrl_restricted: bool,
) -> CliResult<()> {
    let cfg = load(config, None)?;
    let instance = cfg.instance.build()?;
    let profile = profile_for(&cfg, &instance, None)?;
    let rule = match rule {
        RuleArg::Random => EvictionRule::Random,
        RuleArg::Lrl => EvictionRule::Lrl,
        RuleArg::Lfl => EvictionRule::Lfl { tau },
    };
    let mut adaptive = AdaptiveConfig::new(rule, virtual_losses == Switch::On);
    adaptive.lrl_restricted = lrl_restricted;
    let sc = sim_config(&cfg, cli.seed, horizon, warmup)
        .with_adaptive(adaptive)
        .with_snapshots(snapshot_every);
    let sim = Simulation::new(&instance.catalog, &profile, &instance.params, sc)?;
    finish_run(&out_dir(&cli.out, &cfg, "adaptive"), &instance, sim, true)
}

fn run_and_report(cli: &Cli, mut cfg: ScenarioConfig, default_out: PathBuf) -> CliResult<()> {
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    let out = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or(default_out);
    let opts = RunOptions {
        jobs: cli.jobs,
        out: Some(out.clone()),
        ..RunOptions::default()
    };
    let (report, _) = run_scenario(&cfg, &opts)?;
    print!("{}", report.render_text());
    println!("\nwrote {}", out.display());
    let failed = report.failure_count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_RUN,
            message: format!("{failed} cell(s) failed"),
        });
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Meanfield {
            config,
            policy,
            loss_model,
        } => cmd_meanfield(cli, config, policy.as_deref(), *loss_model),
        Command::Optimize {
            config,
            method,
            two_pass,
        } => cmd_optimize(cli, config, *method, *two_pass),
        Command::Simulate {
            config,
            policy,
            horizon,
            warmup,
        } => cmd_simulate(cli, config, policy.as_deref(), *horizon, *warmup),
        Command::Adaptive {
            config,
            rule,
            virtual_losses,
            tau,
            snapshot_every,
            horizon,
            warmup,
            lrl_restricted,
        } => cmd_adaptive(
            cli,
            config,
            *rule,
            *virtual_losses,
            *tau,
            *snapshot_every,
            *horizon,
            *warmup,
            *lrl_restricted,
        ),
        Command::Reproduce {
            preset: name,
            horizon,
            show,
        } => {
            if *show {
                print!("{}", preset_source(name)?);
                return Ok(());
            }
            let mut cfg = preset(name)?;
            if let Some(h) = horizon {
                cfg = cfg.with_horizon(*h)?;
            }
            run_and_report(cli, cfg, PathBuf::from("out").join(name))
        }
        Command::Compare { config } => {
            let cfg = ScenarioConfig::from_file(config)?;
            let name = cfg.name();
            run_and_report(cli, cfg, PathBuf::from("out").join(name))
        }
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
