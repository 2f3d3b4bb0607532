//! End-to-end checks of the binary: determinism of the emitted files, exit
//! codes, and the documented output shapes.

use std::path::Path;
use std::process::{Command, Output};

fn qgp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qgp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn simulate_is_deterministic_and_row_counted() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "sampling": { "grid_points": 500 }, "output": "a" }"#,
    );
    let out = qgp(&["simulate", "--config", &cfg], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first = read(tmp.path(), "a/signals.csv");
    assert_eq!(
        first.lines().count(),
        501,
        "header plus one row per grid point"
    );
    assert!(first.starts_with("t,clean_ii,clean_vj,clean_vi,noisy_ii,noisy_vj,noisy_vi"));

    let out = qgp(&["simulate", "--config", &cfg, "--out", "b"], tmp.path());
    assert!(out.status.success());
    let second = read(tmp.path(), "b/signals.csv");
    assert_eq!(first, second, "same config and seed give identical bytes");
}

#[test]
fn simulate_zero_noise_copies_clean_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "sampling": { "grid_points": 200 },
             "noise": { "std_ii": 0.0, "std_vj": 0.0, "std_vi": 0.0 },
             "output": "o" }"#,
    );
    let out = qgp(&["simulate", "--config", &cfg], tmp.path());
    assert!(out.status.success());
    for line in read(tmp.path(), "o/signals.csv").lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(&f[1..4], &f[4..7], "noisy columns equal clean at sigma 0");
    }
}

#[test]
fn fit_and_predict_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{ "optimizer": { "max_iters": 400, "f_tol": 1e-10, "x_tol": 1e-8,
                            "init_step": 0.4, "seed": 0 },
             "output": "o" }"#,
    );
    let out = qgp(&["fit", "--config", &cfg], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let report: serde_json::Value =
        serde_json::from_str(&read(tmp.path(), "o/report.json")).unwrap();
    let err_r = report["report"]["error_r_percent"].as_f64().unwrap();
    let err_l = report["report"]["error_l_percent"].as_f64().unwrap();
    assert!(err_r < 5.0, "R error {err_r}%");
    assert!(err_l < 5.0, "L error {err_l}%");
    let trace = read(tmp.path(), "o/trace.csv");
    assert_eq!(
        trace.lines().count(),
        401,
        "header plus one row per evaluation"
    );

    let out = qgp(
        &["predict", "--report", "o/report.json", "--out", "p"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for name in [
        "predictions_i_i.csv",
        "predictions_v_j.csv",
        "predictions_v_i.csv",
    ] {
        let table = read(tmp.path(), &format!("p/{name}"));
        assert_eq!(table.lines().count(), 201, "{name}");
        for line in table.lines().skip(1) {
            let var: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
            assert!(var >= 0.0);
        }
    }

    // byte-stability of the regenerated tables
    let out = qgp(
        &["predict", "--report", "o/report.json", "--out", "q"],
        tmp.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        read(tmp.path(), "p/predictions_v_i.csv"),
        read(tmp.path(), "q/predictions_v_i.csv")
    );
}

#[test]
fn fit_hhl_exact_records_backend_stats() {
    let tmp = tempfile::tempdir().unwrap();
    // tiny training set and budget keep the statevector runs fast
    let cfg = write_config(
        tmp.path(),
        r#"{ "sampling": { "counts": { "n_vi": 3, "n_ii": 3, "n_vj": 2 } },
             "optimizer": { "max_iters": 4, "f_tol": 1e-10, "x_tol": 1e-8,
                            "init_step": 0.4, "seed": 0 },
             "backend": "hhl-exact",
             "output": "o" }"#,
    );
    let out = qgp(&["fit", "--config", &cfg], tmp.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&read(tmp.path(), "o/report.json")).unwrap();
    let stats = &report["report"]["fit"]["backend_stats"];
    assert!(!stats.is_null(), "quantum runs record backend stats");
    let nl = stats["eval_qubits_used"].as_u64().unwrap();
    assert!((1..=8).contains(&nl), "eval qubits {nl}");
}

#[test]
fn invalid_backend_and_unknown_key_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), r#"{ "output": "o" }"#);
    let out = qgp(
        &["fit", "--config", &cfg, "--backend", "quantum9000"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("backend"), "{stderr}");

    let bad = write_config(tmp.path(), r#"{ "spices": 11 }"#);
    let out = qgp(&["simulate", "--config", &bad], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("spices"), "offending key named: {stderr}");
}

#[test]
fn hhl_solve_known_cases_and_error_code() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("eye.csv"), "1,0\n0,1\n").unwrap();
    std::fs::write(tmp.path().join("y.csv"), "3\n4\n").unwrap();
    let out = qgp(
        &[
            "hhl", "solve", "--matrix", "eye.csv", "--rhs", "y.csv", "--nl", "2",
        ],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = v["quadratic_form"].as_f64().unwrap();
    assert!((q - 25.0).abs() < 1e-9, "identity gives ||y||^2, got {q}");

    std::fs::write(tmp.path().join("d12.csv"), "1,0\n0,2\n").unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    std::fs::write(tmp.path().join("b.csv"), format!("{s}\n{s}\n")).unwrap();
    let out = qgp(
        &[
            "hhl", "solve", "--matrix", "d12.csv", "--rhs", "b.csv", "--nl", "2",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let q = v["quadratic_form"].as_f64().unwrap();
    assert!((q - 0.75).abs() < 1e-9, "diag(1,2) quadratic form, got {q}");

    std::fs::write(tmp.path().join("asym.csv"), "1,1\n0,1\n").unwrap();
    let out = qgp(
        &["hhl", "solve", "--matrix", "asym.csv", "--rhs", "y.csv"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(3), "numerical failure exit code");
}

#[test]
fn aqc_compile_identity_and_cnot() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("eye.json"), r#"{"re": [[1,0],[0,1]]}"#).unwrap();
    let out = qgp(
        &["aqc", "compile", "--target", "eye.json", "--budget", "0"],
        tmp.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["result"]["distance"].as_f64().unwrap() < 1e-8);

    std::fs::write(
        tmp.path().join("cx.json"),
        r#"{"re": [[1,0,0,0],[0,1,0,0],[0,0,0,1],[0,0,1,0]]}"#,
    )
    .unwrap();
    let out = qgp(
        &[
            "aqc",
            "compile",
            "--target",
            "cx.json",
            "--budget",
            "1",
            "--tolerance",
            "1e-8",
            "--max-iters",
            "20000",
        ],
        tmp.path(),
    );
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["result"]["distance"].as_f64().unwrap() < 1e-6);
}
