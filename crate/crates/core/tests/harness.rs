//! Scenario runs: determinism, aggregate bookkeeping, artifacts and config
//! errors.

use std::collections::BTreeMap;
use std::path::Path;

use edgerep::harness::{preset, preset_names, run_scenario, RunOptions, ScenarioConfig};
use edgerep::model::{proportional_replication, write_profile_csv, zipf_catalog};
use edgerep::Error;

const SMALL: &str = r#"
name = "small"
horizon = 800.0
seeds = [1, 2, 3]
snapshot_every = 50.0

[instance]
kind = "zipf"
n = 30
m = 150
d = 4
rho = 0.85
alpha = 0.9

[[policies]]
kind = "proportional"

[[policies]]
kind = "greedy"

[[policies]]
kind = "adaptive"
rule = "random"
virtual = true
"#;

fn small() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(SMALL, Path::new("small.toml")).unwrap()
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn run_into(dir: &Path, jobs: usize) {
    let opts = RunOptions {
        jobs: Some(jobs),
        out: Some(dir.to_path_buf()),
        ..RunOptions::default()
    };
    let (report, _) = run_scenario(&small(), &opts).unwrap();
    assert_eq!(report.failure_count(), 0);
}

#[test]
fn reruns_are_byte_identical_whatever_the_worker_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_into(a.path(), 1);
    run_into(b.path(), 3);
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        if name == "timing.json" {
            continue;
        }
        assert!(&fb[name] == bytes, "{name} differs between runs");
    }
    for expected in [
        "report.json",
        "report.txt",
        "comparison.csv",
        "aggregate.csv",
        "timing.json",
        "proportional/profile.csv",
        "proportional/meanfield.csv",
        "proportional/seed-2/contents.csv",
        "proportional/seed-2/z_hist.csv",
        "proportional/seed-2/summary.json",
        "adaptive-random-virtual/seed-1/trajectory.csv",
        "adaptive-random-virtual/seed-1/final_state.csv",
        "adaptive-random-virtual/seed-1/convergence.json",
    ] {
        assert!(fa.contains_key(expected), "missing {expected}");
    }
}

#[test]
fn aggregates_agree_with_per_seed_outputs() {
    let dir = tempfile::tempdir().unwrap();
    run_into(dir.path(), 2);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    for pol in report["policies"].as_array().unwrap() {
        let label = pol["label"].as_str().unwrap();
        let runs = pol["runs"].as_array().unwrap();
        assert_eq!(runs.len(), 3);
        let mut per_seed = Vec::new();
        for run in runs {
            let seed = run["seed"].as_u64().unwrap();
            let summary: serde_json::Value = serde_json::from_slice(
                &std::fs::read(dir.path().join(label).join(format!("seed-{seed}")).join("summary.json")).unwrap(),
            )
            .unwrap();
            assert_eq!(summary, run["summary"]);
            per_seed.push(summary["inefficiency"].as_f64().unwrap());

            let mut rdr =
                csv::Reader::from_path(dir.path().join(label).join(format!("seed-{seed}/contents.csv"))).unwrap();
            let headers = rdr.headers().unwrap().clone();
            let col = headers.iter().position(|h| h == "losses").unwrap();
            let losses: u64 = rdr.records().map(|r| r.unwrap()[col].parse::<u64>().unwrap()).sum();
            assert_eq!(losses, summary["losses"].as_u64().unwrap());
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        let sd = (per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (per_seed.len() - 1) as f64).sqrt();
        let agg = &pol["inefficiency"];
        assert!((agg["mean"].as_f64().unwrap() - mean).abs() <= 1e-15 * mean.max(1.0));
        assert!((agg["sd"].as_f64().unwrap() - sd).abs() <= 1e-12);
    }

    let mut rdr = csv::Reader::from_path(dir.path().join("aggregate.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[0][0], "proportional");
    assert!(!rows[0][6].is_empty(), "static policies carry a mean-field value");
    assert!(rows[2][6].is_empty(), "adaptive policies carry none");
}

#[test]
fn every_preset_round_trips_through_toml() {
    for name in preset_names() {
        let cfg = preset(name).unwrap();
        let text = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&text, Path::new("x.toml")).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn config_mistakes_are_config_errors() {
    let bad = [
        SMALL.replace("rho = 0.85", "rho = 0.85\nbogus = 1"),
        SMALL.replace("rule = \"random\"", "rule = \"fifo\""),
        SMALL.replace("rho = 0.85", "rho = 1.2"),
        SMALL.replace("horizon = 800.0", "horizon = 800.0\nwarmup = 900.0"),
        SMALL.replace("kind = \"greedy\"", "kind = \"magic\""),
    ];
    for text in &bad {
        let err = ScenarioConfig::from_toml_str(text, Path::new("bad.toml"))
            .and_then(|cfg| run_scenario(&cfg, &RunOptions::default()).map(|_| ()))
            .unwrap_err();
        assert!(err.is_config_error(), "{err}");
    }
    assert!(matches!(preset("no-such-preset"), Err(Error::UnknownPreset(_))));
}

#[test]
fn csv_policies_resolve_relative_to_the_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let cat = zipf_catalog(30, 0.9, 150.0 * 0.85 / 30.0).unwrap();
    let params = cat.params(150, 4).unwrap();
    let prof = proportional_replication(&cat, &params, 0.95).unwrap();
    write_profile_csv(dir.path().join("prof.csv"), &cat, &prof).unwrap();
    let text = SMALL
        .replace("kind = \"greedy\"", "kind = \"csv\"\npath = \"prof.csv\"")
        .replace("seeds = [1, 2, 3]", "seeds = [1]");
    let path = dir.path().join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = ScenarioConfig::from_file(&path).unwrap();
    let (report, _) = run_scenario(&cfg, &RunOptions::default()).unwrap();
    let a = report.policy("proportional").unwrap();
    let b = report.policy("csv").unwrap();
    assert_eq!(a.profile, b.profile);
    assert_eq!(a.runs[0].summary, b.runs[0].summary);
}
