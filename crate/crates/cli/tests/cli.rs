use std::fs;
use std::process::Command;

fn agile() -> Command {
    Command::new(env!("CARGO_BIN_EXE_agile"))
}

const SMALL: &str = r#"
seed = 7
n_sims = 3
[design]
mode = "single"
doses = 3
[scenarios]
safety = [0]
efficacy = [1]
[calibration]
structures = [[4, 2, 30]]
prior_scenarios = [2]
[calibration.boundaries]
coarse_step = 0.05
fine_step = 0.01
refine = 1
[calibration.prior_grid]
nu = [0.125]
mu2 = [-0.25, 0.0]
var1 = [1.4]
var2 = [0.35]
[calibration.safety_run]
cohorts = 4
"#;

fn write_config(dir: &std::path::Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn simulate_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let status = agile()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--threads", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for f in ["summary.json", "summary_long.csv", "wide_recommended.csv", "plot_sample_size.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn seed_override_changes_summary_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("o");
    let ok = agile()
        .args(["simulate", "--seed", "99", "--sims", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(ok.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 99);
    assert_eq!(summary["config"]["n_sims"], 2);
}

#[test]
fn calibration_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cal");
    let b = agile()
        .args(["calibrate-boundaries", "--sims", "300", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(b.success());
    assert!(out.join("boundaries.csv").exists());
    let p = agile()
        .args(["calibrate-prior", "--sims", "10", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(p.success());
    let grid = fs::read_to_string(out.join("prior_grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3);
}

#[test]
fn run_one_prints_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let output = agile()
        .args(["run-one", "--scenario", "single-1-3", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    assert!(text.contains("\"event\""));
    assert!(dir.path().join("run_one_single-1-3.json").exists());
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &SMALL.replace("seed = 7", ""));
    let output = agile().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("seed"));
    let missing = agile().args(["simulate", "--config", "/nonexistent.toml"]).output().unwrap();
    assert!(!missing.status.success());
    let unknown = agile()
        .args(["run-one", "--scenario", "nope", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!unknown.status.success());
}

#[test]
fn shipped_config_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let output = agile()
        .args(["run-one", "--config", "single-baseline", "--scenario", "single-4-0", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}
