//! End-to-end runs of the `vidcompress` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vidcompress"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn report(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("JSON report on stdout")
}

fn write_json(path: &Path, v: &Value) -> String {
    fs::write(path, v.to_string()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&run(&["toyrun", "--no-such-flag"])), 2);
    assert_eq!(code(&run(&["verify", "--suites", ","])), 2);
    assert_eq!(code(&run(&["verify", "--suites", "nope"])), 2);
    assert_eq!(
        code(&run(&["prune-solve", "--q", "/dev/null", "--n", "1", "--rate", "0.5"])),
        2
    );
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_json(&dir.path().join("c.json"), &serde_json::json!({}));
    assert_eq!(code(&run(&["--config", &cfg, "sample", "--p", "/dev/null"])), 2);
}

#[test]
fn missing_files_exit_3() {
    assert_eq!(code(&run(&["prune-solve", "--q", "/no/such/q.json", "--n", "1"])), 3);
    assert_eq!(code(&run(&["motion", "--clip", "/no/such/clip"])), 3);
}

#[test]
fn fault_injection_exits_1() {
    let o = run(&["--json", "verify", "--suites", "merge", "--fault-magnitude", "1e-3"]);
    assert_eq!(code(&o), 1);
    let r = report(&o);
    assert_eq!(r["passed"], false);
    assert_eq!(r["metrics"]["fault"]["kind"], "weight_perturbation");
}

#[test]
fn toyrun_is_deterministic_and_seeded() {
    let a = run(&[
        "--json",
        "--seed",
        "3",
        "toyrun",
        "--prune-rate",
        "0.5",
        "--fun-factor",
        "0.5",
    ]);
    let b = run(&[
        "--json",
        "--seed",
        "3",
        "toyrun",
        "--prune-rate",
        "0.5",
        "--fun-factor",
        "0.5",
    ]);
    let c = run(&[
        "--json",
        "--seed",
        "4",
        "toyrun",
        "--prune-rate",
        "0.5",
        "--fun-factor",
        "0.5",
    ]);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let (ra, rc) = (report(&a), report(&c));
    assert_ne!(ra["metrics"]["output_digest"], rc["metrics"]["output_digest"]);
    assert_ne!(ra["inputs_digest"], rc["inputs_digest"]);
    let reduction = ra["metrics"]["reduction_percent"].as_f64().unwrap();
    assert!(reduction > 0.0);
}

#[test]
fn flops_only_on_large_preset() {
    let o = run(&[
        "--json",
        "toyrun",
        "--svd-like",
        "--flops-only",
        "--multiscaling",
        "spatial",
    ]);
    assert_eq!(code(&o), 0);
    let r = report(&o);
    let pct = r["metrics"]["reduction_percent"].as_f64().unwrap();
    assert!(pct > 0.0 && pct < 100.0);
}

#[test]
fn prune_solve_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let q = write_json(
        &dir.path().join("q.json"),
        &serde_json::json!([0.9, 0.8, 0.05, 0.3, 0.2]),
    );
    let o = run(&["--json", "prune-solve", "--q", &q, "--rate", "0.6", "--jacobian"]);
    assert_eq!(code(&o), 0);
    let r = report(&o);
    assert_eq!(r["metrics"]["n"], 2);
    let p: Vec<f64> = serde_json::from_value(r["metrics"]["solution"]["p"].clone()).unwrap();
    assert!((p.iter().sum::<f64>() - 2.0).abs() < 1e-9);
    assert_eq!(r["metrics"]["jacobian"].as_array().unwrap().len(), 5);

    let pf = write_json(&dir.path().join("p.json"), &serde_json::json!(p));
    for sampler in ["brewer", "systematic-pps"] {
        let o = run(&[
            "--json",
            "--seed",
            "9",
            "sample",
            "--p",
            &pf,
            "--draws",
            "20000",
            "--sampler",
            sampler,
        ]);
        assert_eq!(code(&o), 0, "{sampler}");
        let r = report(&o);
        assert_eq!(r["metrics"]["fixed_size"], true);
        assert_eq!(r["metrics"]["first_sample"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn motion_synthetic_clips() {
    let o = run(&["--json", "motion", "--synthetic", "static"]);
    assert_eq!(code(&o), 0);
    assert_eq!(report(&o)["metrics"]["descriptor"]["area"], 1.0);

    let o = run(&["--json", "motion", "--synthetic", "orthogonal"]);
    assert_eq!(code(&o), 0);
    let area = report(&o)["metrics"]["descriptor"]["area"].as_f64().unwrap();
    assert!((area - 15.0 / 28.0).abs() <= 1e-12);
}

#[test]
fn csi_then_merge_on_saved_net() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("run");
    let funnels = dir.path().join("funnels");
    let merged = dir.path().join("merged");
    let o = run(&["--out", net.to_str().unwrap(), "toyrun"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(net.join("report.json").is_file());
    assert!(net.join("output.mvdt").is_file());

    let weights = net.join("net").join("net.json");
    let o = run(&[
        "--json",
        "--out",
        funnels.to_str().unwrap(),
        "csi",
        "--weights",
        weights.to_str().unwrap(),
        "--fun-factor",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    assert!(!r["metrics"]["pairs"].as_array().unwrap().is_empty());

    let o = run(&[
        "--json",
        "--out",
        merged.to_str().unwrap(),
        "merge",
        "--weights",
        weights.to_str().unwrap(),
        "--funnels",
        funnels.join("funnels.json").to_str().unwrap(),
        "--trials",
        "10",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    let before = r["metrics"]["params_before"].as_u64().unwrap();
    let after = r["metrics"]["params_after"].as_u64().unwrap();
    assert!(after < before);
    assert!(merged.join("net.json").is_file());
}

#[test]
fn report_file_matches_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--json",
        "--out",
        dir.path().to_str().unwrap(),
        "verify",
        "--suites",
        "gates,motion",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(fs::read(dir.path().join("report.json")).unwrap(), o.stdout);
}
