//! Drives the `reachctl` binary end to end: exit codes, error messages,
//! golden outputs and file round trips.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reachctl::cli::files::ControllerFile;
use reachctl::sim::{default_dt, verify, Arena};
use reachctl::synth::synth_polytope;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_reachctl"));
    c.env("REACHCTL_THREADS", "1");
    c
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.json"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert_eq!(actual, want, "output differs from {}", path.display());
}

#[test]
fn analyze_exit_codes() {
    for (name, code) in [
        ("box_right", 0),
        ("box_left", 2),
        ("example1", 2),
        ("o_crossing", 0),
        ("ill1", 0),
        ("ill2", 0),
        ("ill3", 0),
    ] {
        let o = run(&["analyze", fixture(name).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(code), "{name}: {}", stderr(&o));
    }
}

#[test]
fn ragged_matrix_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"version":1,"system":{"A":[[0,1],[0]],"a":[0,0],"B":[[0],[1]]},
            "polytope":{"vertices":[[0,0],[1,0],[0,1]]},"target":{"vertices":[[1,0],[0,1]]}}"#,
    )
    .unwrap();
    let o = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("system.A[1]"), "{}", stderr(&o));
}

#[test]
fn syntax_error_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"version\": 1,\n  \"system\": [\n").unwrap();
    let o = run(&["analyze", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn missing_file_and_bad_flags_are_errors() {
    assert_eq!(run(&["analyze", "/nonexistent/problem.json"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn analyze_golden() {
    for name in ["example1", "box_right", "o_crossing"] {
        let o = run(&["analyze", fixture(name).to_str().unwrap()]);
        golden(&format!("analyze_{name}.json"), &stdout(&o));
    }
}

#[test]
fn synthesize_golden() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["synthesize", fixture("example1").to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    golden("synthesize_example1.json", &stdout(&o));
    let written = std::fs::read_to_string(dir.path().join("controller.json")).unwrap();
    assert_eq!(written.trim_end(), stdout(&o).trim_end());
    let tri: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("triangulation.json")).unwrap()).unwrap();
    assert!(tri.is_object() || tri.is_array());
}

#[test]
fn controller_file_round_trip_verifies_identically() {
    let pb = common::fixture("example1");
    let syn = synth_polytope(&pb.sys, &pb.p, &pb.f, pb.options.eps).unwrap();
    let arena = Arena::new(syn.domain.clone(), pb.f.clone());
    let dt = default_dt(&pb.sys, &syn.controller, &syn.domain);
    let direct = verify(&pb.sys, &syn.controller, &arena, 50, 3, dt, 100.0);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let prob = fixture("example1");
    let p = prob.to_str().unwrap();
    assert_eq!(run(&["synthesize", p, "--out", d]).status.code(), Some(0));
    let ctrl = dir.path().join("controller.json");
    let o = run(&["verify", p, ctrl.to_str().unwrap(), "--samples", "50", "--seed", "3", "--out", d]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verification.json")).unwrap()).unwrap();
    assert_eq!(report["nsamples"], 50);
    assert_eq!(report["successes"].as_u64().unwrap() as usize, direct.successes);
    let close = |k: &str, v: f64| (report[k].as_f64().unwrap() - v).abs() <= 1e-12 * v.abs().max(1.0);
    assert!(close("max_time", direct.max_time.unwrap()));
    assert!(close("mean_time", direct.mean_time.unwrap()));
    assert!(close("dt", direct.dt));

    // the reloaded controller is the synthesized one, to the printed digits
    let cf = ControllerFile::load(&ctrl).unwrap();
    let (reloaded, _, _) = cf.to_controller("controller.json").unwrap();
    assert_eq!(reloaded.pieces.len(), syn.controller.pieces.len());
    for (a, b) in reloaded.pieces.iter().zip(&syn.controller.pieces) {
        assert!((&a.gain - &b.gain).amax() <= 1e-15 * b.gain.amax().max(1.0));
        assert!((&a.offset - &b.offset).amax() <= 1e-15 * b.offset.amax().max(1.0));
        assert_eq!(a.exit_facet, b.exit_facet);
    }
}

#[test]
fn simulate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let p = fixture("box_right");
    let p = p.to_str().unwrap();
    assert_eq!(run(&["synthesize", p, "--out", d]).status.code(), Some(0));
    let ctrl = dir.path().join("controller.json");
    let o = run(&["simulate", p, ctrl.to_str().unwrap(), "--x0", "0.5,0.5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,x1,x2,u1,piece"));
    // the closing event row carries the state only
    let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), 5);
    let x1: f64 = last[1].parse().unwrap();
    assert!((x1 - 2.0).abs() < 1e-6, "trajectory should end on the right edge: {last:?}");
    assert!(last[3].is_empty() && last[4].is_empty());

    // several initial states need an output directory
    let two = ["simulate", p, ctrl.to_str().unwrap(), "--x0", "0.5,0.5", "--x0", "1,0.2"];
    assert_eq!(run(&two).status.code(), Some(1));
    let mut with_out = two.to_vec();
    with_out.extend(["--out", d]);
    assert_eq!(run(&with_out).status.code(), Some(0));
    assert!(dir.path().join("trajectory_0.csv").exists() && dir.path().join("trajectory_1.csv").exists());
}

#[test]
fn plot_data_formats() {
    let p = fixture("example1");
    let o = run(&["plot-data", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let text = v.to_string();
    for key in ["\"P\"", "\"F\"", "Reach_eps"] {
        assert!(text.contains(key), "plot data lacks {key}");
    }
    let o = run(&["plot-data", p.to_str().unwrap(), "--format", "csv"]);
    let csv = stdout(&o);
    assert!(csv.starts_with("kind,label,index,x1,x2"));
    assert!(csv.lines().count() > 8);
}

#[test]
fn cut_reports_reach_eps() {
    let o = run(&["cut", fixture("example1").to_str().unwrap(), "--eps", "0.1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v.to_string().contains("reach_eps"));
}
