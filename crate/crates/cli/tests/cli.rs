use std::path::Path;
use std::process::Command;

use monotone_spde_cli::{EXIT_BOUND, EXIT_CONFIG, EXIT_IO, EXIT_OK, THREADS_ENV};

const SMALL: &str = "
grid.n = 8
noise.modes = 8
ensemble.paths = 100
time.dt = 5e-3
time.horizon = 0.2
save.paths = 2
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_monotone-spde"))
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str], cfg: &Path, out: &Path) -> std::process::Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .env_remove(THREADS_ENV)
        .output()
        .unwrap()
}

#[test]
fn missing_output_directory_is_created() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("a/b/c");
    let o = run(&["simulate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["run_summary.json", "identities.csv", "path_0000.csv", "path_0001.csv", "simulate_checks.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["exit_code"], 0);
    assert!(summary["git_describe"].is_string());
}

#[test]
fn unwritable_output_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    // a regular file where a directory is expected
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = run(&["validate"], &cfg, &blocker.join("out"));
    assert_eq!(o.status.code(), Some(EXIT_IO));
}

#[test]
fn configuration_errors_exit_with_the_config_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for bad in ["grid.n = 0", "no.such.key = 1", "ensemble.paths = 10", "time.dt = -1", "drift.kind = quartic"] {
        let cfg = write_config(tmp.path(), bad);
        let o = run(&["simulate"], &cfg, &out);
        assert_eq!(o.status.code(), Some(EXIT_CONFIG), "{bad}");
        assert!(!o.stderr.is_empty());
    }
    let o = bin().args(["validate", "--config", "/nonexistent/run.cfg"]).output().unwrap();
    assert_ne!(o.status.code(), Some(EXIT_OK));
}

#[test]
fn failed_assumption_exits_with_the_bound_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "drift.kind = exp_asymmetric");
    let o = run(&["validate"], &cfg, &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(EXIT_BOUND));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("(vi)")), "{stdout}");
}

#[test]
fn same_seed_gives_identical_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    run(&["simulate", "--seed", "5"], &cfg, &a);
    run(&["simulate", "--seed", "5"], &cfg, &b);
    run(&["simulate", "--seed", "6"], &cfg, &c);
    let read = |d: &Path| std::fs::read(d.join("identities.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(std::fs::read(a.join("path_0000.csv")).unwrap(), std::fs::read(b.join("path_0000.csv")).unwrap());
}

#[test]
fn thread_count_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env(THREADS_ENV, "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["threads"], 3);
    // the flag wins over the variable
    let o = bin()
        .args(["validate", "--threads", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env(THREADS_ENV, "3")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(EXIT_OK));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("run_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["threads"], 2);
}
