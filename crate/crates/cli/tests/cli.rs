use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
name = "cli"
horizon = 600.0
seeds = [1, 2]

[instance]
kind = "zipf"
n = 30
m = 150
d = 4
rho = 0.85
alpha = 0.8

[[policies]]
kind = "proportional"

[[policies]]
kind = "optimized"
"#;

fn edgerep(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgerep"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn scenario(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn lists_presets() {
    let dir = tempfile::tempdir().unwrap();
    let out = edgerep(&["presets"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "table1-class",
        "zipf08-proportional",
        "zipf12-proportional",
        "zipf08-optimized",
        "zipf12-optimized",
        "zipf08-adaptive-speed",
    ] {
        assert!(text.lines().any(|l| l == name), "{name} missing");
    }
    let show = edgerep(&["reproduce", "table1-class", "--show"], dir.path());
    assert!(show.status.success());
    assert!(String::from_utf8(show.stdout).unwrap().contains("m = 3800"));
}

#[test]
fn meanfield_and_optimize_write_their_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    let out = dir.path().join("mf");
    let run = edgerep(
        &["meanfield", "--config", &cfg, "--out", out.to_str().unwrap()],
        dir.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let mf = read_json(&out.join("meanfield.json"));
    assert!(mf["inefficiency"].as_f64().unwrap() > 0.0);
    let rows = std::fs::read_to_string(out.join("meanfield.csv")).unwrap();
    assert_eq!(rows.lines().count(), 31);

    let out = dir.path().join("opt");
    let run = edgerep(
        &[
            "optimize",
            "--config",
            &cfg,
            "--method",
            "greedy",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let opt = read_json(&out.join("optimize.json"));
    assert_eq!(opt["method"], "greedy");
    assert!(opt["gamma_bar_predicted"].as_f64().unwrap() < mf["gamma_bar"].as_f64().unwrap());
    assert!(out.join("profile.csv").exists());
}

#[test]
fn simulate_and_adaptive_runs_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    let out = dir.path().join("sim");
    let run = edgerep(
        &[
            "simulate",
            "--config",
            &cfg,
            "--policy",
            "optimized",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let summary = read_json(&out.join("summary.json"));
    assert!(summary["arrivals"].as_u64().unwrap() > 0);
    assert!(out.join("timing.json").exists());

    let out = dir.path().join("adaptive");
    let run = edgerep(
        &[
            "adaptive",
            "--config",
            &cfg,
            "--rule",
            "lfl",
            "--virtual",
            "on",
            "--horizon",
            "400",
            "--snapshot-every",
            "20",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("final_state.csv").exists());
}

#[test]
fn compare_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), SCENARIO);
    let mut reports = Vec::new();
    for (name, jobs) in [("a", "1"), ("b", "2")] {
        let out = dir.path().join(name);
        let run = edgerep(
            &["compare", &cfg, "--jobs", jobs, "--out", out.to_str().unwrap()],
            dir.path(),
        );
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        reports.push(std::fs::read(out.join("report.json")).unwrap());
        assert!(out.join("aggregate.csv").exists());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["reproduce".into(), "no-such-preset".into()],
        vec![
            "compare".into(),
            scenario(dir.path(), &SCENARIO.replace("rho = 0.85", "rho = 1.5")),
        ],
        vec![
            "compare".into(),
            scenario(dir.path(), &SCENARIO.replace("alpha = 0.8", "alpha = 0.8\nbeta = 1")),
        ],
        vec!["meanfield".into(), "--config".into(), "missing.toml".into()],
        vec!["presets".into(), "--no-such-flag".into()],
    ];
    for args in &cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let run = edgerep(&args, dir.path());
        assert_eq!(
            run.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&run.stderr)
        );
    }
}
