#![allow(clippy::excessive_precision)]

use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_cowcka");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-11 * b.abs().max(1e-300)
}

#[test]
fn rate_matches_reference_breakdown() {
    let v = stdout_json(&run(&["rate", "--distance", "100", "--ed-prime", "0.01"]));
    let b = &v["breakdown"];
    let expect = [
        ("eta", 0.081881921769576219),
        ("q_0a", 0.0081547800795630264),
        ("q_aa", 0.016243040045840816),
        ("e_t", 0.0010012138421142203),
        ("visibility", 0.97998804148942401),
        ("zeta", 0.74937533961613331),
        ("q_mu", 0.0081381550512417171),
        ("e_mu", 0.24999091713879448),
        ("rate_unclamped", -0.0054067754854078106),
    ];
    for (k, x) in expect {
        assert!(close(b[k].as_f64().unwrap(), x), "{k}: {}", b[k]);
    }
    assert_eq!(b["rate"].as_f64().unwrap(), 0.0);
}

#[test]
fn rate_at_zero_distance_reports_detector_efficiency() {
    let v = stdout_json(&run(&["rate", "--distance", "0"]));
    assert_eq!(v["breakdown"]["eta"].as_f64().unwrap(), 0.56);
}

#[test]
fn validation_failures_exit_2() {
    for args in [
        &["rate", "--t", "1.5"][..],
        &["rate", "--mu", "-1"],
        &["rate", "--ed-prime", "0.7"],
        &["sweep", "--distances", "100:0:10"],
        &["bounds", "--distances", "0:100:0"],
        &["optimize", "--population", "1"],
        &["simulate", "--n-slots", "0"],
        &["equivalence", "--format", "csv"],
        &["rate", "--workers", "0"],
        &["frobnicate"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
    }
}

#[test]
fn tiny_simulation_exits_3() {
    let out = run(&["simulate", "--n-slots", "10"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bounds_csv_schema() {
    let out = run(&["bounds", "--distances", "0:200:100"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "distance_km,eta_lim,repeaterless");
    assert_eq!(lines[1], "0,0.56,1.18442457114");
    assert!(lines[3].starts_with("200,"));
    assert!(lines[3].ends_with(",0.0173770257101"));
}

#[test]
fn sweep_csv_schema_and_order() {
    let out = run(&["sweep", "--distances", "0:60:20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "distance_km,t,mu,rate,rate_unclamped,eta_lim,repeaterless"
    );
    let d: Vec<f64> = lines
        .map(|l| {
            assert_eq!(l.split(',').count(), 7);
            assert!(!l.contains(' '));
            l.split(',').next().unwrap().parse().unwrap()
        })
        .collect();
    assert_eq!(d, [0.0, 20.0, 40.0, 60.0]);
}

#[test]
fn dump_config_round_trips_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.json");
    let second = dir.path().join("b.json");
    let out = run(&[
        "rate",
        "--distance",
        "77.7",
        "--t",
        "0.061",
        "--ed-prime",
        "0.03",
        "--seed",
        "12",
        "--dump-config",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "rate",
        "--config",
        first.to_str().unwrap(),
        "--dump-config",
        "--out",
        second.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let a = std::fs::read_to_string(&first).unwrap();
    assert_eq!(a, std::fs::read_to_string(&second).unwrap());
    let v: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["out"], Value::Null);
    assert_eq!(v["experiment"]["total_distance_km"], 77.7);
    assert_eq!(v["simulation"]["seed"], 12);

    // Reusing the dump must not clobber it.
    let out = run(&[
        "bounds",
        "--config",
        first.to_str().unwrap(),
        "--distances",
        "0:10:10",
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .starts_with("distance_km,"));
    assert_eq!(std::fs::read_to_string(&first).unwrap(), a);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": {"total_distance_km": 300}, "free": {"send_probability": 0.06, "intensity": 0.11}}"#,
    )
    .unwrap();
    let path = cfg.to_str().unwrap();
    let file_only = stdout_json(&run(&["rate", "--config", path]));
    assert_eq!(file_only["distance_km"], 300.0);
    assert_eq!(file_only["free"]["send_probability"], 0.06);
    let flagged = stdout_json(&run(&["rate", "--config", path, "--distance", "10"]));
    assert_eq!(flagged["distance_km"], 10.0);
    assert_eq!(flagged["free"]["intensity"], 0.11);

    std::fs::write(&cfg, r#"{"experiment": {"unknown_knob": 1}}"#).unwrap();
    assert_eq!(run(&["rate", "--config", path]).status.code(), Some(2));
}

#[test]
fn simulate_writes_transcript_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let tr = dir.path().join("slots.csv");
    let summary = dir.path().join("summary.json");
    let out = run(&[
        "simulate",
        "--n-slots",
        "5000",
        "--distance",
        "5",
        "--transcript",
        tr.to_str().unwrap(),
        "--out",
        summary.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(v["counts"]["n_slots"], 5000);
    assert_eq!(v["comparisons"].as_array().unwrap().len(), 8);

    let mut rdr = csv::Reader::from_path(&tr).unwrap();
    assert_eq!(&rdr.headers().unwrap()[0], "index");
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 5000);
    assert_eq!(&rows[0][0], "1");
    assert_eq!(&rows[4999][0], "5000");
}

#[test]
fn simulate_csv_comparison_table() {
    let out = run(&[
        "simulate",
        "--n-slots",
        "20000",
        "--distance",
        "5",
        "--format",
        "csv",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "quantity,empirical,std_error,analytic,z_score,within_3_sigma"
    );
    assert_eq!(lines.count(), 8);
}

#[test]
fn optimize_reports_zero_rate_beyond_reach() {
    let v = stdout_json(&run(&["optimize", "--distance", "700"]));
    assert_eq!(v["status"], "zero_rate");
    assert_eq!(v["breakdown"]["rate"].as_f64().unwrap(), 0.0);
    assert_eq!(v["method"], "ga");
}

#[test]
fn help_exits_zero() {
    assert!(run(&["--help"]).status.success());
    assert!(run(&["sweep", "--help"]).status.success());
}
