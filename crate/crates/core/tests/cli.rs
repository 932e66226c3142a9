//! End-to-end tests of the command-line binary: exit codes, output
//! files, and the text the commands print.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netflux"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_temp(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// A two-in one-out junction whose velocities do not balance, so the
/// coupling loses mass at the junction.
const UNBALANCED_JUNCTION: &str = r#"{
  "network": {
    "nodes": ["s1", "s2", "junction", "sink"],
    "edges": [
      {"id": "a", "init": "s1", "ter": "junction", "cells": 16, "u": "1", "u_x": "0", "rho0": "1"},
      {"id": "b", "init": "s2", "ter": "junction", "cells": 16, "u": "1", "u_x": "0", "rho0": "1"},
      {"id": "c", "init": "junction", "ter": "sink", "cells": 16, "u": "1", "u_x": "0", "rho0": "1"}
    ]
  },
  "boundary": {"s1": "1", "s2": "1", "sink": "0"},
  "sim": {"T": 1.0, "cfl": 1.0}
}"#;

#[test]
fn simulate_is_deterministic_across_runs() {
    let out_a = tempfile::tempdir().unwrap();
    let out_b = tempfile::tempdir().unwrap();
    let path = scenario("y_graph.json");
    for dir in [out_a.path(), out_b.path()] {
        let out = run(&[
            "simulate",
            path.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--envelope",
        ]);
        assert!(out.status.success(), "simulate failed: {}", stderr_of(&out));
    }
    let mut names: Vec<_> = std::fs::read_dir(out_a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["diagnostics.csv", "envelope.csv", "manifest.json", "snapshots.csv", "traces.csv"]
    );
    for name in &names {
        let a = std::fs::read(out_a.path().join(name)).unwrap();
        let b = std::fs::read(out_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let header = std::fs::read_to_string(out_a.path().join("snapshots.csv")).unwrap();
    assert!(header.starts_with("edge,cell,x,t,rho"));
}

#[test]
fn simulate_rejects_snapshots_outside_the_time_range() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        scenario("single_edge.json").to_str().unwrap(),
        "--out",
        out_dir.path().to_str().unwrap(),
        "--snapshots",
        "0.5,9.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("snapshot"));
}

#[test]
fn verify_passes_on_a_conservative_junction() {
    let out = run(&["verify", scenario("y_graph.json").to_str().unwrap()]);
    let text = stdout_of(&out);
    assert!(out.status.success(), "verify failed:\n{text}");
    assert!(text.contains("overall: pass"), "unexpected report:\n{text}");
}

#[test]
fn verify_flags_an_unbalanced_junction() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(dir.path(), "unbalanced.json", UNBALANCED_JUNCTION);
    let out = run(&["verify", path.to_str().unwrap()]);
    let text = stdout_of(&out);
    assert_eq!(out.status.code(), Some(1), "report:\n{text}");
    assert!(text.contains("energy-condition"));
    assert!(text.contains("fail"));
    assert!(text.contains("skipped (dependency failed)"), "report:\n{text}");
    assert!(text.contains("overall: fail"));
}

#[test]
fn verify_writes_a_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run(&[
        "verify",
        scenario("loop.json").to_str().unwrap(),
        "--json",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let body = std::fs::read_to_string(&report).unwrap();
    assert!(body.contains("\"verdict\": \"pass\""));
    assert!(body.contains("\"seed\": 42"));
}

#[test]
fn picard_reports_its_iteration_count() {
    let out = run(&["picard", scenario("loop_picard.json").to_str().unwrap()]);
    let text = stdout_of(&out);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(text.contains("converged in"), "unexpected output: {text}");
}

#[test]
fn picard_rejects_signed_data() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "network": {
        "nodes": ["a", "b"],
        "edges": [{"id": "e", "init": "a", "ter": "b", "cells": 8, "u": "1", "u_x": "0", "rho0": "-1"}]
      },
      "boundary": {"a": "1", "b": "0"},
      "sim": {"T": 0.5, "cfl": 1.0}
    }"#;
    let path = write_temp(dir.path(), "signed.json", body);
    let out = run(&["picard", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("negative"), "stderr: {}", stderr_of(&out));
}

#[test]
fn convergence_prints_errors_and_orders() {
    let out = run(&[
        "convergence",
        scenario("intro_example.json").to_str().unwrap(),
        "--levels",
        "2",
    ]);
    let text = stdout_of(&out);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(text.contains("l1_error"));
    assert!(text.contains("order"));
    // Header plus one row per level.
    assert_eq!(text.lines().count(), 4, "unexpected table:\n{text}");
}

#[test]
fn convergence_needs_a_single_edge_reference() {
    let out = run(&["convergence", scenario("y_graph.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn stability_prints_one_distance_per_delta() {
    let out = run(&[
        "stability",
        scenario("stability_base.json").to_str().unwrap(),
        "--perturb",
        "1",
        "--deltas",
        "0.5,0.25",
    ]);
    let text = stdout_of(&out);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert_eq!(text.lines().count(), 3, "unexpected table:\n{text}");
}

#[test]
fn stability_rejects_space_dependent_perturbations() {
    let out = run(&[
        "stability",
        scenario("stability_base.json").to_str().unwrap(),
        "--perturb",
        "x",
        "--deltas",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn missing_input_is_an_input_error() {
    let out = run(&["verify", "/definitely/not/there.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_json_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_temp(dir.path(), "broken.json", "{ \"network\": [");
    let out = run(&["simulate", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("line"), "stderr: {}", stderr_of(&out));
}

#[test]
fn structural_problems_name_the_offending_field() {
    let dir = tempfile::tempdir().unwrap();
    let body = r#"{
      "network": {
        "nodes": ["a", "b"],
        "edges": [{"id": "e", "init": "a", "ter": "nowhere", "cells": 8, "u": "1", "u_x": "0", "rho0": "1"}]
      },
      "boundary": {"a": "1", "b": "0"},
      "sim": {"T": 0.5, "cfl": 1.0}
    }"#;
    let path = write_temp(dir.path(), "dangling.json", body);
    let out = run(&["simulate", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("ter"), "stderr: {}", stderr_of(&out));
}
