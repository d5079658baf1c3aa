//! End-to-end runs through the experiment runner and the binary.

use std::fs;
use std::path::Path;
use std::process::Command;

use crgrowth::cli::{parse_spec, parse_spec_as, run_experiment, Kind};

fn run(text: &str, kind: Kind, par: usize, dir: &Path) -> crgrowth::cli::RunReport {
    let spec = parse_spec_as(text, Some(kind)).unwrap();
    run_experiment(&spec, par, dir).unwrap()
}

fn read(dir: &Path, f: &str) -> String {
    fs::read_to_string(dir.join(f)).unwrap()
}

#[test]
fn same_seed_gives_identical_results() {
    let text = "seed = 11\nreplicas = 6\nhorizon = 3\nmodel = two-type\nlambda_2 = 0.5\n";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(text, Kind::Simulate, 1, a.path());
    run(text, Kind::Simulate, 1, b.path());
    assert_eq!(read(a.path(), "results.csv"), read(b.path(), "results.csv"));
    assert_eq!(read(a.path(), "events.jsonl"), read(b.path(), "events.jsonl"));
}

#[test]
fn parallelism_does_not_change_statistics() {
    let text = "seed = 3\nreplicas = 8\nmu.n_list = 2,4\nmu.horizon = 100\n";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(text, Kind::EstimateMu, 1, a.path());
    run(text, Kind::EstimateMu, 3, b.path());
    assert_eq!(read(a.path(), "results.csv"), read(b.path(), "results.csv"));
}

#[test]
fn manifest_round_trips() {
    let text = "seed = 2\nreplicas = 2\nhorizon = 2\nradius.family = exponential\nradius.rate = 2\n";
    let dir = tempfile::tempdir().unwrap();
    run(text, Kind::Simulate, 1, dir.path());
    let manifest = read(dir.path(), "manifest.txt");
    let spec = parse_spec_as(text, Some(Kind::Simulate)).unwrap();
    assert_eq!(parse_spec(&manifest).unwrap(), spec);
    assert!(manifest.contains(&format!("# config_hash = {}", spec.config_hash())));
    let results = read(dir.path(), "results.csv");
    assert!(results.lines().skip(1).all(|l| l.ends_with(&format!(",{},2", spec.config_hash()))));
}

#[test]
fn couple_check_writes_passing_certificates() {
    let text = "replicas = 3\nhorizon = 1.5\ncouple.audit_points = 50\ncouple.brw_cap = 5000\n";
    let dir = tempfile::tempdir().unwrap();
    let r = run(text, Kind::CoupleCheck, 2, dir.path());
    assert_eq!(r.exit_code(), 0);
    let certs = read(dir.path(), "certificates.csv");
    let mut lines = certs.lines();
    assert_eq!(lines.next(), Some("event_seq,time,check_name,pass"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.ends_with(",true")));
    for c in ["two-type-in-one-type", "one-type-in-union", "one-type-in-brw", "lambda-family"] {
        assert!(rows.iter().any(|l| l.contains(c)), "{c}");
    }
    assert!(r.results.iter().any(|(n, e)| n == "pass[two-type-in-one-type]" && e.point == 1.0));
}

#[test]
fn coexist_reports_both_initial_pairs() {
    let text = "replicas = 4\nhorizon = 4\ncoexist.window = 1\n\
                coexist.alt_initial_1 = 3,0:1\ncoexist.alt_initial_2 = -3,0:1\n";
    let dir = tempfile::tempdir().unwrap();
    let r = run(text, Kind::Coexist, 1, dir.path());
    let names: Vec<&str> = r.results.iter().map(|(n, _)| n.as_str()).collect();
    for n in ["type1_alive", "type2_alive", "both_alive", "alt_type1_alive", "alt_both_alive"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn other_kinds_run() {
    let dir = tempfile::tempdir().unwrap();
    let r = run("d = 1\nreplicas = 20\nbrw.horizon = 1.5\n", Kind::BrwSpeed, 1, dir.path());
    assert!(r.results[0].1.point > 0.0);
    let r = run(
        "replicas = 4\nhorizon = 3\nmu.hat = 1.1\nradius.family = exponential\n",
        Kind::EffectiveCount,
        1,
        dir.path(),
    );
    assert!(r.results.iter().any(|(n, _)| n == "effective_bound"));
    let r = run("replicas = 3\nmu.hat = 1.1\nshape.time = 5\n", Kind::ShapeCheck, 1, dir.path());
    assert!(r.results.iter().any(|(n, _)| n == "shape_deviation"));
}

fn binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_crgrowth")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.cfg");
    fs::write(&good, "replicas = 2\nhorizon = 1\n").unwrap();
    let out = dir.path().join("out");
    let (code, _) = binary(&[
        "simulate",
        "--config",
        good.to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(read(&out, "manifest.txt").contains("seed = 5"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "radius.family = pareto\nradius.scale = 1\nradius.shape = 4\nd = 2\nd = 3\n").unwrap();
    let (code, err) = binary(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("exponential moment") && err.contains("duplicate key"), "{err}");

    let (code, _) = binary(&["simulate", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(code, 4);

    let guard = dir.path().join("guard.cfg");
    fs::write(&guard, "replicas = 1\nhorizon = 50\nmax_events = 20\n").unwrap();
    let (code, err) = binary(&["simulate", "--config", guard.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
}
