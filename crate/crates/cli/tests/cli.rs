//! End-to-end tests of the `fluidtime` binary: exit codes, file contents,
//! determinism, and the CSV loader round-trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fluidtime_cli::output::Table;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fluidtime"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn symmetric_config(dir: &Path, extra: &str) -> PathBuf {
    write_config(
        dir,
        "symmetric.json",
        &format!(
            r#"{{
  "model": {{
    "generator": [[-1.0, 1.0], [1.0, -1.0]],
    "rates": [1.0, -1.0]
  }},
  "clock": {{ "theta": 2.0, "stages": 2 }}{extra}
}}"#
        ),
    )
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

#[test]
fn validate_reports_partition_and_drift() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    let out = run(bin().arg("validate").arg(&cfg));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("up-phases (c > 0): {1}"));
    assert!(text.contains("down-phases (c < 0): {2}"));
    assert!(text.contains("stationary drift: 0"));
}

#[test]
fn invalid_model_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    // Zero rate in phase 2.
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{
  "model": { "generator": [[-1.0, 1.0], [1.0, -1.0]], "rates": [1.0, 0.0] },
  "clock": { "theta": 1.0, "stages": 1 }
}"#,
    );
    let out = run(bin().arg("validate").arg(&cfg));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("rate"), "stderr: {err}");

    // Unparseable JSON is also a validation failure.
    let broken = write_config(dir.path(), "broken.json", "{ not json");
    let out = run(bin().arg("validate").arg(&broken));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cdf_curve_is_monotone_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    let out_dir = dir.path().join("a");
    let status = bin()
        .args(["cdf", cfg.to_str().unwrap(), "--process", "walk"])
        .args(["--x-min", "-4", "--x-max", "4", "--points", "41"])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let table = Table::read(&out_dir.join("cdf_walk.csv")).unwrap();
    assert_eq!(table.header, vec!["x", "k", "P_phase1", "P_phase2"]);
    assert_eq!(table.rows.len(), 41);
    let mut prev = [0.0, 0.0];
    for row in &table.rows {
        for (c, p) in [2usize, 3].iter().zip(prev.iter_mut()) {
            let v = row[*c].unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&v));
            assert!(v + 1e-12 >= *p, "curve must be nondecreasing");
            *p = v;
        }
    }

    // Byte-identical re-run.
    let out_dir2 = dir.path().join("b");
    bin()
        .args(["cdf", cfg.to_str().unwrap(), "--process", "walk"])
        .args(["--x-min", "-4", "--x-max", "4", "--points", "41"])
        .args(["--output", out_dir2.to_str().unwrap()])
        .status()
        .unwrap();
    let bytes_a = fs::read(out_dir.join("cdf_walk.csv")).unwrap();
    let bytes_b = fs::read(out_dir2.join("cdf_walk.csv")).unwrap();
    assert_eq!(bytes_a, bytes_b);
}

#[test]
fn queue_cdf_respects_method_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    // The embedding block count must dominate nu * x (here up to 5), so
    // the default 4L would leave visible wrap-around mass; pass a real K.
    for (method, sub) in [("direct", "d"), ("eps-circulant", "e"), ("embedding", "m")] {
        let out_dir = dir.path().join(sub);
        let status = bin()
            .args(["cdf", cfg.to_str().unwrap(), "--process", "queue"])
            .args(["--x-min", "0", "--x-max", "5", "--points", "11"])
            .args(["--method", method, "--embed-k", "64"])
            .args(["--output", out_dir.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success(), "method {method}");
    }
    // The three methods agree closely on the same grid.
    let read = |sub: &str| Table::read(&dir.path().join(sub).join("cdf_queue.csv")).unwrap();
    let (d, e, m) = (read("d"), read("e"), read("m"));
    for i in 0..d.rows.len() {
        for c in 2..4 {
            let dv = d.rows[i][c].unwrap();
            assert!((dv - e.rows[i][c].unwrap()).abs() < 1e-6);
            assert!((dv - m.rows[i][c].unwrap()).abs() < 1e-6);
        }
    }
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), ",\n  \"mc\": { \"paths\": 50, \"seed\": 9 }");
    let (o1, o2) = (dir.path().join("s1"), dir.path().join("s2"));
    for o in [&o1, &o2] {
        let status = bin()
            .args(["simulate", cfg.to_str().unwrap()])
            .args(["--output", o.to_str().unwrap()])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let b1 = fs::read(o1.join("paths.csv")).unwrap();
    let b2 = fs::read(o2.join("paths.csv")).unwrap();
    assert_eq!(b1, b2);
    // A different seed changes the sample.
    let o3 = dir.path().join("s3");
    bin()
        .args(["simulate", cfg.to_str().unwrap(), "--seed", "10"])
        .args(["--output", o3.to_str().unwrap()])
        .status()
        .unwrap();
    assert_ne!(b1, fs::read(o3.join("paths.csv")).unwrap());
}

#[test]
fn verify_passes_on_symmetric_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(
        dir.path(),
        ",\n  \"initial\": { \"level\": 1.0, \"phase\": 1 },\n  \"mc\": { \"paths\": 20000, \"seed\": 7 }",
    );
    let out_dir = dir.path().join("v");
    let out = run(bin()
        .args(["verify", cfg.to_str().unwrap()])
        .args(["--output", out_dir.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = Table::read(&out_dir.join("verify.csv")).unwrap();
    assert_eq!(
        report.header,
        vec!["check", "x", "y", "analytic", "estimate", "std_error", "z_score"]
    );
    assert!(report.rows.len() >= 50);
    // An absurd threshold forces the verification exit code.
    let out = run(bin()
        .args(["verify", cfg.to_str().unwrap(), "--threshold", "0.0001"])
        .args(["--output", out_dir.to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn stages_dump_contains_all_families() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    let out_dir = dir.path().join("st");
    let status = bin()
        .args(["stages", cfg.to_str().unwrap()])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["psi.csv", "psi_hat.csv", "u.csv", "u_hat.csv", "upsilon.csv"] {
        let t = Table::read(&out_dir.join(name)).unwrap();
        assert_eq!(t.rows.len(), 2, "{name}: one scalar entry per stage");
    }
    // Stage-0 return probability for the symmetric model at nu = 1.
    let psi = Table::read(&out_dir.join("psi.csv")).unwrap();
    let v = psi.rows[0][3].unwrap();
    assert!((v - (2.0 - 3.0_f64.sqrt())).abs() < 1e-12);
}

#[test]
fn joint_and_bph_and_extrema_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    let out_dir = dir.path().join("j");
    let status = bin()
        .args(["joint", cfg.to_str().unwrap(), "--which", "min"])
        .args(["--y-values", "0.5,1.5"])
        .args(["--x-min", "-3", "--x-max", "0", "--points", "7"])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let t = Table::read(&out_dir.join("joint_walk_min.csv")).unwrap();
    assert_eq!(t.rows.len(), 14);

    let status = bin()
        .args(["extrema", cfg.to_str().unwrap(), "--which", "max", "--process", "queue"])
        .args(["--x-min", "0", "--x-max", "4", "--points", "9"])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let t = Table::read(&out_dir.join("extrema_queue_max.csv")).unwrap();
    assert_eq!(t.rows.len(), 9);

    let status = bin()
        .args(["bph", cfg.to_str().unwrap()])
        .args(["--x-min", "-6", "--x-max", "6", "--points", "25"])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let t = Table::read(&out_dir.join("bph_density.csv")).unwrap();
    assert_eq!(t.rows.len(), 25);
    for row in &t.rows {
        let (f, f_alt) = (row[1].unwrap(), row[2].unwrap());
        assert!((f - f_alt).abs() <= 1e-9);
        assert!(f >= 0.0);
    }
}

#[test]
fn paper_example_emits_study_files() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("ex");
    let status = bin()
        .args(["paper-example"])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let maturities = Table::read(&out_dir.join("maturity_cdf.csv")).unwrap();
    assert_eq!(maturities.header[0], "theta");
    // Median of the phase-2 curve shifts right as theta grows.
    let median_for = |theta: f64| -> f64 {
        let mut best = f64::NAN;
        for row in &maturities.rows {
            if row[0].unwrap() == theta && row[3].unwrap() >= 0.5 {
                best = row[1].unwrap();
                break;
            }
        }
        best
    };
    let medians: Vec<f64> = [5.0, 10.0, 15.0, 50.0].iter().map(|&t| median_for(t)).collect();
    for pair in medians.windows(2) {
        assert!(pair[1] >= pair[0], "medians {medians:?}");
    }

    let jump = Table::read(&out_dir.join("density_jump.csv")).unwrap();
    assert_eq!(jump.rows.len(), 2);
    for row in &jump.rows {
        let expected = row[2].unwrap();
        let algebraic = row[3].unwrap() - row[4].unwrap();
        let fd = row[5].unwrap();
        assert!((algebraic - expected).abs() <= 1e-10);
        assert!((fd - expected).abs() 	<= 0.02 * expected);
    }

    let erlang = Table::read(&out_dir.join("erlang_cdf.csv")).unwrap();
    assert_eq!(erlang.header[0], "stages");
    assert!(erlang.rows.iter().any(|r| r[0].unwrap() == 30.0));
}

#[test]
fn computation_failure_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), "");
    // Stage index beyond the clock's L is a computation-stage failure.
    let out = run(bin()
        .args(["cdf", cfg.to_str().unwrap(), "--k", "7"])
        .args(["--x-min", "0", "--x-max", "1", "--points", "3"])
        .args(["--output", dir.path().to_str().unwrap()]));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("stage"), "stderr: {err}");
}

#[test]
fn thread_cap_env_var_is_respected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = symmetric_config(dir.path(), ",\n  \"mc\": { \"paths\": 100, \"seed\": 3 }");
    let out_dir = dir.path().join("t");
    let status = bin()
        .env("FLUIDTIME_THREADS", "1")
        .args(["simulate", cfg.to_str().unwrap()])
        .args(["--output", out_dir.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    // Same bytes as the unconstrained run: results are schedule-independent.
    let single = fs::read(out_dir.join("paths.csv")).unwrap();
    let out_dir2 = dir.path().join("t2");
    bin()
        .env("FLUIDTIME_THREADS", "0")
        .args(["simulate", cfg.to_str().unwrap()])
        .args(["--output", out_dir2.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(single, fs::read(out_dir2.join("paths.csv")).unwrap());
}
