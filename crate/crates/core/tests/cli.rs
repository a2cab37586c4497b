//! The `aoi-sim` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aoi_fidelity::harness::output::{read_curve_csv, CURVE_HEADER};
use aoi_fidelity::harness::ExperimentConfig;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn aoi_sim(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-sim"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str = "\
[sim]
horizon = 1500
[sweep]
replications = 2
gamma_step_ms = 30.0
delays_ms = [20.0, 60.0]
[burstiness]
replications = 2
bootstrap_resamples = 200
[ppo]
train_episodes = 32
eval_episodes = 8
plateau_window = 8
";

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    std::fs::write(&path, SMALL).unwrap();
    path
}

#[test]
fn shipped_configs_validate() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["default.toml", "paper.toml"] {
        let path = configs().join(name);
        let out = aoi_sim(&["validate-config", "--config", path.to_str().unwrap()], dir.path());
        assert_eq!(out.status.code(), Some(0), "{name}: {}", stderr(&out));
    }
}

#[test]
fn shipped_default_is_the_builtin_default() {
    let cfg = ExperimentConfig::load(&configs().join("default.toml")).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
    let paper = ExperimentConfig::load(&configs().join("paper.toml")).unwrap();
    assert_eq!((paper.sim.n_cameras, paper.sweep.replications), (18, 40));
}

#[test]
fn missing_config_is_a_config_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = aoi_sim(&["sweep-mat", "--config", "no/such/file.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no/such/file.toml"));
}

#[test]
fn invalid_values_and_unknown_flags_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[sim]\nn_cameras = 0\n").unwrap();
    let out = aoi_sim(&["validate-config", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("n_cameras"));

    let out = aoi_sim(&["sweep-mat", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("Usage"));
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("remote.toml");
    std::fs::write(&cfg, "[sim]\nhorizon = 600\n[sim.remote]\nurl = \"http://127.0.0.1:9/\"\ntimeout_ms = 500\n").unwrap();
    let out = aoi_sim(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn sweep_csv_has_the_documented_header_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = aoi_sim(&["sweep-mat", "--config", cfg.to_str().unwrap(), "--format", "csv"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("out/mat_sweep.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(CURVE_HEADER));
    let points = read_curve_csv(text.as_bytes()).unwrap();
    assert_eq!(points.len(), 5);
    assert!(!dir.path().join("out/mat_sweep_psnr.svg").exists());
    assert!(dir.path().join("out/meta.json").exists());
}

#[test]
fn run_writes_one_row_per_slot_and_age_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = aoi_sim(&["run", "--config", cfg.to_str().unwrap(), "--out", "r"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let ages = std::fs::read_to_string(dir.path().join("r/aoi_trace.csv")).unwrap();
    assert_eq!(ages.lines().next(), Some("slot,age_1,age_2,age_3,age_4,age_5,age_6"));
    assert_eq!(ages.lines().count(), 1 + 1500);
    let slots = std::fs::read_to_string(dir.path().join("r/slots.csv")).unwrap();
    assert_eq!(slots.lines().count(), 1 + 1500);
    assert!(dir.path().join("r/run_psnr.svg").exists());
}
