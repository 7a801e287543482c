use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msopt(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_msopt"));
    cmd.args(args).env_remove("MSOPT_SEED").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// File contents with the given timing columns dropped.
fn without_columns(path: &Path, drop: &[&str]) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let header = rdr.headers().unwrap().clone();
    let keep: Vec<usize> = (0..header.len()).filter(|&i| !drop.contains(&&header[i])).collect();
    rdr.records().map(|r| keep.iter().map(|&i| r.as_ref().unwrap()[i].to_string()).collect()).collect()
}

fn validate(files: &[&Path]) -> Output {
    let args: Vec<&str> = std::iter::once("validate").chain(files.iter().map(|p| p.to_str().unwrap())).collect();
    msopt(&args, &[])
}

#[test]
fn motivating_smoke_run_writes_valid_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let stdout = ok(&msopt(
        &["bench", "motivating", "--scales", "3", "--trials", "1", "--seed", "4", "--snapshot-every", "10", "--out", out],
        &[],
    ));
    for f in ["timing.csv", "percentiles.csv", "cost_bounds.csv", "loss_time.csv", "iterates_S3.csv", "iterates_single_S3.csv"] {
        assert!(stdout.contains(f), "{f} missing from {stdout}");
    }
    let files: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
    let refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    ok(&validate(&refs));
    let rows = without_columns(&dir.path().join("timing.csv"), &[]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn runs_are_deterministic_apart_from_timings() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&msopt(&["bench", "motivating", "--scales", "3..4", "--trials", "2", "--out", d.path().to_str().unwrap()], &[("MSOPT_SEED", "11")]));
    }
    for (file, drop) in [("timing.csv", &["millis"][..]), ("loss_time.csv", &["t_nanos"][..]), ("cost_bounds.csv", &[][..])] {
        assert_eq!(without_columns(&a.path().join(file), drop), without_columns(&b.path().join(file), drop), "{file}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(r#"{{"experiment": "motivating", "scales": "3", "trials": 3, "out": {:?}, "format": "json"}}"#, out),
    )
    .unwrap();
    ok(&msopt(&["bench", "--config", cfg.to_str().unwrap(), "--trials", "1"], &[]));
    let timing: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    assert_eq!(timing.as_array().unwrap().len(), 2);
    ok(&validate(&[&out.join("timing.json"), &out.join("trace_single_S3.json")]));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"experiment": "motivating", "trails": 3}"#).unwrap();
    let out = msopt(&["bench", "--config", cfg.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = msopt(&["bench", "motivating", "--scales", "5..3"], &[]);
    assert_eq!(out.status.code(), Some(2));
    let out = msopt(&["bench", "motivating"], &[("MSOPT_SEED", "not-a-number")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn validate_rejects_malformed_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("percentiles.csv");
    fs::write(&bad, "S,method,p5,p50,p95\n3,single,2.0,1.0,3.0\n").unwrap();
    assert_eq!(validate(&[&bad]).status.code(), Some(2));
    let wrong = dir.path().join("timing.csv");
    fs::write(&wrong, "S,method\n3,single\n").unwrap();
    assert_eq!(validate(&[&wrong]).status.code(), Some(2));
}

#[test]
fn audit_flags_the_secant_distance_counterexamples() {
    let dir = tempfile::tempdir().unwrap();
    let out = msopt(&["audit", "--trials", "300", "--seed", "2", "--out", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let violated: Vec<&str> = stdout.lines().filter(|l| l.trim_start().starts_with("VIOLATED")).collect();
    assert!(!violated.is_empty());
    assert!(violated.iter().all(|l| l.contains("secant_distance")), "{violated:?}");
    ok(&validate(&[&dir.path().join("audit.json")]));
}

#[test]
fn tensor_factorization_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("y.json");
    let values: Vec<String> = (0..3 * 9 * 5).map(|i| format!("{}", 1.0 + ((i * 7) % 11) as f64 / 11.0)).collect();
    fs::write(&input, format!(r#"{{"dims": [3, 9, 5], "values": [{}]}}"#, values.join(","))).unwrap();
    for method in ["factorize", "msfactorize"] {
        let out = dir.path().join(method);
        ok(&msopt(
            &[
                "tensor", method, "--input", input.to_str().unwrap(), "--rank", "2", "--continuous-dims", "2",
                "--max-iter", "50", "--out", out.to_str().unwrap(),
            ],
            &[],
        ));
        assert_eq!(without_columns(&out.join("mixing.csv"), &[]).len(), 6);
        assert!(out.join("core.msot").exists());
        ok(&validate(&[&out.join("trace.json")]));
    }
    let out = msopt(&["tensor", "msfactorize", "--input", input.to_str().unwrap(), "--rank", "2", "--continuous-dims", "1"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tucker_experiments_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    fs::write(&cfg, r#"{"tucker": {"sweep_max_k": 2}}"#).unwrap();
    for exp in ["tucker-geoshape", "coarse-iters-sweep"] {
        let out = dir.path().join(exp);
        ok(&msopt(&["bench", exp, "--config", cfg.to_str().unwrap(), "--trials", "1", "--out", out.to_str().unwrap()], &[]));
        let files: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().path()).collect();
        assert!(!files.is_empty());
        let refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
        ok(&validate(&refs));
    }
}
