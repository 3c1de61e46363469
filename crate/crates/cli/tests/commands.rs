use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pulsekg_core::blowup::UpsilonSeries;
use pulsekg_core::checkpoint;
use pulsekg_core::hyperboloid::read_rows;
use pulsekg_core::integrator::{RunRecord, Termination};
use pulsekg_core::sweep;
use tempfile::TempDir;

fn pulsekg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pulsekg")).args(args).output().expect("spawn pulsekg")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const ZERO: &str = r#"
[grid]
spacing = 0.25

[tensor]
preset = "zero"

[run]
initial = "zero"
duration = 0.5
"#;

#[test]
fn missing_config_names_the_path() {
    let o = pulsekg(&["simulate", "/nonexistent/run.toml", "--out", "/tmp/pulsekg-never"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/run.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_fails_with_line_number() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[grid]\nspacing = 0.25\n\n[run]\nstop = 1.0\n");
    let o = pulsekg(&["simulate", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 5") && err.contains("stop"), "{err}");
}

#[test]
fn zero_data_run_is_all_zero_and_reloadable() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "zero.toml", ZERO);
    let out = dir.path().join("out");
    let o = pulsekg(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let rows = RunRecord::read_csv(&fs::read_to_string(out.join("run.csv")).unwrap()).unwrap();
    assert!(rows.len() > 2);
    for r in &rows {
        assert_eq!((r.sup_u, r.sup_v, r.energy_flat, r.upsilon), (0.0, 0.0, 0.0, Some(0.0)));
    }
    let rec: RunRecord = serde_json::from_str(&fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(rec.rows, rows);
    assert!(matches!(rec.termination, Termination::Completed { .. }));
    let series = UpsilonSeries::read_csv(&fs::read_to_string(out.join("upsilon.csv")).unwrap(), 0.25).unwrap();
    assert!(series.upsilon.iter().all(|&y| y == 0.0));
    assert!(out.join("meta.json").exists());
}

#[test]
fn outputs_are_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bump.toml",
        r#"
[grid]
spacing = 0.25
[pulse]
delta = 0.25
nu = 0.0
[run]
frame = "scaled"
duration = 1.0
initial = "bump"
[run.bump]
amplitude = 0.1
tilt = 0.5
velocity = 0.1
radius = 0.9
"#,
    );
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = pulsekg(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["run.csv", "hyperboloid.csv", "record.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn blowup_preset_exits_two_with_time() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "blowup.toml", "[grid]\nper_delta = 24\n\n[pulse]\ndelta = 0.25\nnu = -0.6\n");
    let out = dir.path().join("out");
    let o = pulsekg(&["simulate", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("blowup detected at t = "), "{}", stdout(&o));

    let rec: RunRecord = serde_json::from_str(&fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    assert!(rec.termination.is_blowup());
    let series = UpsilonSeries::read_csv(&fs::read_to_string(out.join("upsilon.csv")).unwrap(), 0.25).unwrap();
    assert!(!series.is_empty() && series.times[0] == 0.0);
    assert!(series.upsilon[0] > 18.0 * 0.25 * 0.25);
    assert!(series.is_nondecreasing(1e-9));
}

#[test]
fn scaled_run_writes_hyperboloids_and_checkpoints() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "scaled.toml",
        r#"
[grid]
spacing = 0.125
[pulse]
delta = 0.25
nu = 0.0
[run]
frame = "scaled"
duration = 1.5
initial = "bump"
output_every = 4
[run.bump]
amplitude = 0.1
tilt = 0.5
velocity = 0.1
radius = 0.9
[diagnostics]
hyperboloid_ds = 0.1
"#,
    );
    let out = dir.path().join("out");
    let o = pulsekg(&["simulate", &cfg, "--out", out.to_str().unwrap(), "--checkpoint-every", "8"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let rows = read_rows(&fs::read_to_string(out.join("hyperboloid.csv")).unwrap()).unwrap();
    assert!(rows.len() >= 3, "{} rows", rows.len());
    assert!(rows.iter().all(|r| r.e_flat > 0.0 && (r.e_flat - r.e_hyper).abs() <= 1e-10 * r.e_flat));
    assert!(!out.join("upsilon.csv").exists());

    let mut cps: Vec<_> = fs::read_dir(out.join("checkpoints")).unwrap().map(|e| e.unwrap().path()).collect();
    cps.sort();
    assert!(!cps.is_empty());
    let (state, config) = checkpoint::load(cps.last().unwrap()).unwrap();
    assert_eq!(config.grid, *state.grid());
    assert!(state.t() > 2.0);
}

#[test]
fn frame_and_hyperboloid_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "zero.toml", ZERO);
    let out = dir.path().join("out");
    let o = pulsekg(&["simulate", &cfg, "--out", out.to_str().unwrap(), "--frame", "scaled", "--no-hyperboloid"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: RunRecord = serde_json::from_str(&fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(rec.config.mass, 0.25);
    assert_eq!(rec.config.t_start, 2.0);
    assert!(!out.join("hyperboloid.csv").exists());
}

const SMALL_SWEEP: &str = r#"
[sweep]
deltas = [0.25]
per_delta = 16
decay_radius = 4.0
decay_spacing = 0.25
decay_tau_end = 4.0
fit_window = [2.5, 4.0]
"#;

#[test]
fn two_point_sweep_persists_both_outcomes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sweep.toml", &format!("{SMALL_SWEEP}nus = [-1.0, 0.0]\n"));
    let out = dir.path().join("out");
    let o = pulsekg(&["sweep", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let (plan, report) = sweep::load(&out.join("sweep.json")).unwrap();
    assert_eq!(plan.nus, vec![-1.0, 0.0]);
    assert_eq!(report.outcomes.len(), 2);
    let phase = sweep::read_phase_csv(&fs::read_to_string(out.join("phase.csv")).unwrap()).unwrap();
    assert_eq!(phase.len(), 2);
    for (row, o) in phase.iter().zip(&report.outcomes) {
        assert_eq!((row.0, row.1, row.2), (o.nu, o.delta, o.class));
    }
}

#[test]
fn same_class_bracket_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "bracket.toml",
        &format!("{SMALL_SWEEP}nus = [-1.0]\n\n[sweep.bisection]\nlo = -1.0\nhi = -0.9\ntolerance = 0.05\n"),
    );
    let o = pulsekg(&["sweep", &cfg, "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("BLOWUP and DECAY"), "{}", stderr(&o));
}

#[test]
fn profiles_export_round_trips() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("profiles.csv");
    let o = pulsekg(&["profiles", "export", "--out", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("theta,f,g,gprime,h"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(rows.len() >= 4096);
    let mid = rows.iter().min_by(|a, b| (a[0] + 0.5).abs().total_cmp(&(b[0] + 0.5).abs())).unwrap();
    assert!((mid[1] - 1.0).abs() < 1e-8 && (mid[3] - 1.0).abs() < 1e-8 && (mid[4] - 1.0).abs() < 1e-8);
}

#[test]
fn thread_cap_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_pulsekg"))
        .args(["profiles", "export", "--out", "/tmp/pulsekg-never.csv"])
        .env("PULSEKG_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("PULSEKG_THREADS"));
}
