//! End-to-end checks of the command-line interface: exit codes,
//! determinism, manifest contracts, and the planted-cause scan.

use std::path::Path;
use std::process::{Command, Output};

use tailcause::seed::rng_from;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tailcause"))
}

fn run(args: &[&str]) -> Output {
    binary().args(args).output().expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&read(&dir.join("manifest.json"))).expect("valid manifest json")
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let dir_c = tmp.path().join("c");
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "simulate", "--family", "logistic", "--alpha", "0.5", "--n", "500", "--seed", "7",
            "--out-dir", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(&[
        "simulate", "--family", "logistic", "--alpha", "0.5", "--n", "500", "--seed", "8",
        "--out-dir", dir_c.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let a = read(&dir_a.join("draws_logistic.csv"));
    let b = read(&dir_b.join("draws_logistic.csv"));
    let c = read(&dir_c.join("draws_logistic.csv"));
    assert_eq!(a, b, "same seed must reproduce the file byte for byte");
    assert_ne!(a, c, "a different seed must change the draws");
    assert_eq!(a.lines().count(), 501, "header plus one row per pair");
}

#[test]
fn manifest_references_real_files_and_hash_tracks_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let dir_c = tmp.path().join("c");
    for (dir, n) in [(&dir_a, "300"), (&dir_b, "300"), (&dir_c, "400")] {
        let out = run(&[
            "simulate", "--family", "husler-reiss", "--lambda", "1.0", "--n", n, "--seed", "3",
            "--out-dir", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let m_a = manifest(&dir_a);
    let m_b = manifest(&dir_b);
    let m_c = manifest(&dir_c);

    for key in ["command", "config_sha256", "master_seed", "version", "start", "end", "outputs"] {
        assert!(m_a.get(key).is_some(), "manifest is missing `{key}`");
    }
    assert_eq!(m_a["master_seed"], 3);
    for name in m_a["outputs"].as_array().unwrap() {
        let path = dir_a.join(name.as_str().unwrap());
        let meta = std::fs::metadata(&path)
            .unwrap_or_else(|e| panic!("referenced output {} missing: {e}", path.display()));
        assert!(meta.len() > 0, "referenced output {} is empty", path.display());
    }
    assert_eq!(
        m_a["config_sha256"], m_b["config_sha256"],
        "identical configs must hash identically"
    );
    assert_ne!(
        m_a["config_sha256"], m_c["config_sha256"],
        "changing a config key must change the hash"
    );
}

#[test]
fn missing_config_exits_one_and_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "experiment", "--study", "s42", "--config", "definitely_missing.toml",
        "--out-dir", tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("definitely_missing.toml"),
        "stderr must name the file: {stderr}"
    );
}

#[test]
fn study_flag_must_match_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("study.toml");
    std::fs::write(&config, "study = \"s41\"\nreps = 2\n").unwrap();
    let out = run(&[
        "experiment", "--study", "s42", "--config", config.to_str().unwrap(),
        "--out-dir", tmp.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("s41") && stderr.contains("s42"), "{stderr}");
}

#[test]
fn bad_arguments_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap().to_string();
    // Logistic family without its dependence parameter.
    let out = run(&["simulate", "--family", "logistic", "--n", "10", "--out-dir", &dir]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown flag is a usage error, not a crash.
    let out = run(&["simulate", "--family", "logistic", "--alpha", "0.5", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    // Out-of-range level.
    let out = run(&["icp", "run", "--data", "x.csv", "--alpha", "1.5", "--out-dir", &dir]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_out_dir_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("blocker");
    std::fs::write(&blocker, "not a directory").unwrap();
    let out = run(&[
        "simulate", "--family", "logistic", "--alpha", "0.5", "--n", "10",
        "--out-dir", blocker.join("sub").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Two environments, the dependence strength driven by the first
/// covariate only, the second pure noise; the intervention shifts the
/// driver far enough that pooled fits without it cannot be invariant.
fn planted_scan_csv() -> String {
    let mut csv = String::from("env,y,x1,x2\n");
    for (env, shift) in [("e1", -3.0), ("e2", 3.0)] {
        let mut rng = rng_from(17, &[if shift < 0.0 { 1 } else { 2 }]);
        for _ in 0..600 {
            let x1: f64 = shift + normal(&mut rng);
            let x2: f64 = normal(&mut rng);
            let theta = 1.0 + 1.0 / (1.0 + (-x1).exp());
            let u: f64 = rand::Rng::gen_range(&mut rng, 1e-12..1.0);
            let y = theta.ln() - (-u.ln()).ln();
            csv.push_str(&format!("{env},{y},{x1},{x2}\n"));
        }
    }
    csv
}

fn normal(rng: &mut impl rand::Rng) -> f64 {
    // Box-Muller is enough for a fixture.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[test]
fn icp_run_recovers_the_planted_cause() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("scan.csv");
    std::fs::write(&data, planted_scan_csv()).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "icp", "run", "--data", data.to_str().unwrap(),
        "--out-dir", out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&read(&out_dir.join("icp_result.json"))).unwrap();
    assert_eq!(report["s_hat"], serde_json::json!(["1"]));
    assert_eq!(report["s_hat_label"], "{1}");
    assert_eq!(report["covariates"], serde_json::json!(["x1", "x2"]));
    assert_eq!(report["all_rejected"], false);
}

#[test]
fn pipeline_run_is_deterministic_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let fx_dir = tmp.path().join("fixture");
    let out = run(&[
        "pipeline", "fixture", "--kind", "distance", "--weeks", "160", "--seed", "3",
        "--out-dir", fx_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let obs = fx_dir.join("observations.csv");
    let meta = fx_dir.join("metadata.csv");

    let mut dirs = Vec::new();
    for name in ["a", "b"] {
        let dir = tmp.path().join(name);
        let out = run(&[
            "pipeline", "run",
            "--observations", obs.to_str().unwrap(),
            "--metadata", meta.to_str().unwrap(),
            "--draws", "2", "--smoothing", "fixed", "--lambda-margin", "1",
            "--seed", "11", "--out-dir", dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        dirs.push(dir);
    }

    let m = manifest(&dirs[0]);
    let outputs: Vec<String> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    for required in ["pvalues_boxplot.csv", "shat_tally.csv", "distance_effect.csv", "draws.csv"] {
        assert!(outputs.iter().any(|o| o == required), "missing {required}");
    }
    assert!(outputs.iter().any(|o| o.starts_with("qq_")), "no QQ files emitted");
    for name in &outputs {
        let a = read(&dirs[0].join(name));
        let b = read(&dirs[1].join(name));
        assert_eq!(a, b, "output {name} must be identical across equal-seed runs");
        assert!(!a.is_empty());
    }
}
