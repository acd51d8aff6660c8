use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fracheat::cli::{parse_config_str, Report};
use fracheat::ExperimentConfig;

const SMALL: &str = r#"{
  "n_paths": 24,
  "solver": { "n_modes": 8, "time_steps": 64 }
}"#;

fn fracheat(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fracheat"));
    cmd.args(args).env_remove("FRACHEAT_THREADS");
    if let Some(t) = threads {
        cmd.env("FRACHEAT_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.json");
    fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn run_ok(cfg: &Path, out: &Path, sub: &[&str], threads: Option<&str>) {
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(sub);
    let o = fracheat(&args, threads);
    assert!(o.status.success(), "{sub:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn read_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn header_of(path: &Path) -> (String, String) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    (lines.next().unwrap().to_string(), lines.next().unwrap().to_string())
}

#[test]
fn outputs_carry_manifest_and_headers() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    run_ok(&cfg, &out, &["density"], None);
    let (manifest, header) = header_of(&out.join("density.csv"));
    assert!(manifest.starts_with("# {"));
    assert!(manifest.contains("\"subcommand\""));
    assert_eq!(header, "point,density");
    run_ok(&cfg, &out, &["malliavin"], None);
    let (_, header) = header_of(&out.join("malliavin_matrix.csv"));
    assert_eq!(header, "s,comp_1,comp_2");
    let body = fs::read_to_string(out.join("malliavin_matrix.csv")).unwrap();
    let row = body.lines().nth(2).unwrap();
    assert!(row.split(',').all(|v| v.contains('e')), "{row}");
}

#[test]
fn thread_count_does_not_change_outputs() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    run_ok(&cfg, &out, &["density"], Some("1"));
    let first = read_sorted(&out);
    run_ok(&cfg, &out, &["--threads", "3", "density"], None);
    assert_eq!(first, read_sorted(&out));
}

#[test]
fn seed_override_changes_the_run() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    run_ok(&cfg, &out, &["sample-fbm"], None);
    let a = fs::read_to_string(out.join("fbm.csv")).unwrap();
    run_ok(&cfg, &out, &["--seed", "7", "sample-fbm"], None);
    let b = fs::read_to_string(out.join("fbm.csv")).unwrap();
    assert_ne!(a.lines().nth(3), b.lines().nth(3));
    assert!(b.lines().next().unwrap().contains("\"seed\":7"));
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let (dir, cfg) = setup();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"hurst": 0.4}"#).unwrap();
    let out = dir.path().join("out");
    let o = fracheat(&["--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap(), "solve"], None);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(err.contains("hurst"));

    let o = fracheat(&["--config", "/nonexistent/cfg.json", "solve"], None);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8(o.stderr).unwrap().trim_end().lines().count(), 1);

    let o = fracheat(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(String::from_utf8(o.stderr).unwrap().trim_end().lines().count(), 1);

    let o = fracheat(&["--threads", "0", "solve"], None);
    assert_eq!(o.status.code(), Some(2));

    let o = fracheat(
        &["--config", cfg.to_str().unwrap(), "verify-bounds", "--bound", "nope-1.0"],
        None,
    );
    assert_eq!(o.status.code(), Some(1));

    // a regular file where the output directory should go
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "x").unwrap();
    let o = fracheat(
        &["--config", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap(), "sample-fbm"],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(String::from_utf8(o.stderr).unwrap().trim_end().lines().count(), 1);
}

#[test]
fn help_and_version_succeed() {
    assert!(fracheat(&["--help"], None).status.success());
    let v = fracheat(&["--version"], None);
    assert!(v.status.success());
    assert!(String::from_utf8(v.stdout).unwrap().contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = parse_config_str(SMALL).unwrap();
    let again = parse_config_str(&cfg.to_json()).unwrap();
    assert_eq!(cfg, again);
    assert_eq!(parse_config_str("{}").unwrap(), ExperimentConfig::default());
    assert!(Report::default().table("density.csv").is_none());
}
