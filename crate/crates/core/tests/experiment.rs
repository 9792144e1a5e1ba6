use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nslab::experiment::{self, ExperimentConfig, GridConfig, Scenario};
use nslab::function_spaces::SpaceNorm;
use nslab::GridSpec;

fn config(scenario: Scenario, amplitude: f64, t_max: f64) -> ExperimentConfig {
    ExperimentConfig {
        scenario,
        space: SpaceNorm::WeightedLinfty,
        amplitude,
        seed: 7,
        t_max,
        dt: 0.05,
        alpha: 3.0,
        hardy_trials: 2,
        output_dir: PathBuf::from("unused"),
        checkpoint_every: 10,
        grid: GridConfig::from(GridSpec::new(GridSpec::default_box().box_length(), 16, 2.0 / 3.0).unwrap()),
    }
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join(format!("{}.toml", cfg.scenario));
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    path
}

fn nslab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nslab")).args(args).output().unwrap()
}

fn run_cli(cfg: &Path, out: &Path) -> Output {
    nslab(&["--serial", "run", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()])
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

fn checkpoints(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

const ARTIFACTS: [&str; 3] = ["ledger.csv", "diagnostics.csv", "gen_energy.csv"];

#[test]
fn smoke_run_is_quick_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(Scenario::ZeroV, 0.5, 1.0));
    let out = tmp.path().join("out");
    let start = Instant::now();
    let o = run_cli(&cfg, &out);
    assert!(start.elapsed() < Duration::from_secs(10));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    for name in ARTIFACTS.iter().chain(&["config.toml", "hardy.csv", "report.txt", "mild.ckpt"]) {
        assert!(out.join(name).exists(), "{name}");
    }
    let ledger = String::from_utf8(read(&out, "ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 22);
    assert_eq!(checkpoints(&out).len(), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS") && !stdout.contains("FAIL"));
}

#[test]
fn oversized_background_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(Scenario::SelfSimilarV, 400.0, 1.0));
    let out = tmp.path().join("out");
    let o = run_cli(&cfg, &out);
    assert!(!o.status.success());
    assert!(out.join("report.txt").exists());
}

#[test]
fn runs_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(Scenario::SmallStationaryV, 0.05, 1.0));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(run_cli(&cfg, &a).status.success());
    let o = nslab(&["--threads", "2", "run", cfg.to_str().unwrap(), "--output-dir", b.to_str().unwrap()]);
    assert!(o.status.success());
    for name in ARTIFACTS.iter().chain(&["hardy.csv"]) {
        assert_eq!(read(&a, name), read(&b, name), "{name}");
    }
}

#[test]
fn replay_from_a_middle_checkpoint_is_bitwise() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(Scenario::SelfSimilarV, 0.05, 1.0));
    let full = tmp.path().join("full");
    assert!(run_cli(&cfg, &full).status.success());
    let mid = checkpoints(&full)[0].clone();
    assert!(mid.ends_with("step_00000010.ckpt"));
    let again = tmp.path().join("again");
    let o = nslab(&["replay", mid.to_str().unwrap(), "--extra-time", "0.5", "--output-dir", again.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ARTIFACTS {
        assert_eq!(read(&full, name), read(&again, name), "{name}");
    }
    let last = |d: &Path| std::fs::read(checkpoints(d).last().unwrap()).unwrap();
    assert_eq!(last(&full), last(&again));
}

#[test]
fn split_run_matches_a_single_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = config(Scenario::SmallStationaryV, 0.05, 1.0);
    let whole = tmp.path().join("whole");
    experiment::run(&c, Some(&whole)).unwrap();
    c.t_max = 0.5;
    let half = tmp.path().join("half");
    experiment::run(&c, Some(&half)).unwrap();
    let end = checkpoints(&half).pop().unwrap();
    let cont = tmp.path().join("cont");
    let o = experiment::replay(&end, 0.5, Some(&cont)).unwrap();
    assert!(o.passed());
    for name in ["ledger.csv", "diagnostics.csv"] {
        assert_eq!(read(&whole, name), read(&cont, name), "{name}");
    }
}

#[test]
fn zero_extra_time_adds_no_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let c = config(Scenario::ZeroV, 0.5, 0.5);
    let dir = tmp.path().join("run");
    experiment::run(&c, Some(&dir)).unwrap();
    let before = read(&dir, "ledger.csv");
    let end = checkpoints(&dir).pop().unwrap();
    let o = experiment::replay(&end, 0.0, Some(&tmp.path().join("same"))).unwrap();
    assert_eq!(o.final_step, 10);
    assert_eq!(before, read(&tmp.path().join("same"), "ledger.csv"));
    assert!(experiment::replay(&end, -1.0, None).is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    experiment::run(&config(Scenario::ZeroV, 0.5, 0.5), Some(&dir)).unwrap();
    let end = checkpoints(&dir).pop().unwrap();
    let mut bytes = std::fs::read(&end).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&end, bytes).unwrap();
    let o = nslab(&["replay", end.to_str().unwrap(), "--extra-time", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).to_lowercase();
    assert!(err.contains("checksum"), "{err}");
}

#[test]
fn config_errors_name_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_config(tmp.path(), &config(Scenario::ZeroV, 0.5, 1.0));
    let text = std::fs::read_to_string(&path).unwrap().replace("t_max", "t_maxx");
    std::fs::write(&path, text).unwrap();
    let o = nslab(&["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("t_maxx") && err.contains("line"), "{err}");
    assert!(ExperimentConfig::from_toml_str("scenario = \"zero_V\"").is_err());
}

#[test]
fn output_directory_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &config(Scenario::ZeroV, 0.5, 0.2));
    let out = tmp.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_nslab"))
        .args(["run", cfg.to_str().unwrap()])
        .current_dir(tmp.path())
        .env("NSLAB_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(out.join("ledger.csv").exists());
    assert!(!tmp.path().join("unused").exists());
}

#[test]
fn hardy_subcommand_prints_csv() {
    let o = nslab(&["hardy", "lebesgue3", "--trials", "3", "--points", "16", "--seed", "5"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("trial_index,ratio,norm_W,grad_g,grad_h"));
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 4);
    assert!(text.lines().last().unwrap().starts_with("# K_hat"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K_hat"));
    assert!(!nslab(&["hardy", "morrey3p:1.5", "--points", "16"]).status.success());
}
