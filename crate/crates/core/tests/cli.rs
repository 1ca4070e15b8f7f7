//! End-to-end checks of the command-line surface: exit codes, fixture
//! round trips, config validation, and output determinism.

use std::fs;
use std::process::Command;

use tempfile::tempdir;

fn dfir() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dfir"))
}

#[test]
fn verify_clean_block_exits_zero_and_writes_report() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = dfir()
        .args([
            "verify",
            "--block",
            "firc3",
            "--dtype",
            "f64",
            "--seeds",
            "5",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["summary"]["fail"], 0);
    assert_eq!(json["schema_version"], 1);
    assert!(json["cases"].as_array().unwrap().len() > 5);
}

#[test]
fn forced_zero_tolerance_fails_with_exit_one() {
    let output = dfir()
        .args(["verify", "--block", "dcfa", "--tolerance", "0", "--seeds", "3"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("FAIL"), "expected failures in:\n{stdout}");
}

#[test]
fn malformed_config_exits_two_without_report() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, "{ not json").unwrap();
    let out = dir.path().join("report.json");
    let output = dfir()
        .args([
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!out.exists(), "no report should be written on config errors");
}

#[test]
fn unknown_block_exits_two() {
    let output = dfir()
        .args(["verify", "--block", "resnet"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn fixtures_round_trip_through_demo() {
    let dir = tempdir().unwrap();
    let fixture = dir.path().join("in.dfir");
    let status = dfir()
        .args([
            "fixtures-gen",
            "--shape",
            "1x16x8x8",
            "--dtype",
            "f64",
            "--seed",
            "9",
            "--out",
            fixture.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());

    let out = dir.path().join("out.dfir");
    let output = dfir()
        .args([
            "demo",
            "--block",
            "dcfa",
            "--seeds",
            "9",
            "--input",
            fixture.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let written = dfir_core::io::read_tensor(&out).unwrap();
    assert_eq!(written.shape(), &[1, 16, 8, 8]);
}

#[test]
fn demo_with_same_seed_is_byte_identical() {
    let dir = tempdir().unwrap();
    let out1 = dir.path().join("a.dfir");
    let out2 = dir.path().join("b.dfir");
    for out in [&out1, &out2] {
        let status = dfir()
            .args([
                "demo",
                "--block",
                "firc3",
                "--seeds",
                "31",
                "--out",
                out.to_str().unwrap(),
            ])
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
}

#[test]
fn truncated_fixture_is_a_usage_error() {
    let dir = tempdir().unwrap();
    let fixture = dir.path().join("in.dfir");
    let status = dfir()
        .args([
            "fixtures-gen",
            "--shape",
            "1x4x4x4",
            "--out",
            fixture.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let mut bytes = fs::read(&fixture).unwrap();
    bytes.truncate(bytes.len() - 5);
    fs::write(&fixture, bytes).unwrap();

    let output = dfir()
        .args([
            "demo",
            "--block",
            "dcfa",
            "--input",
            fixture.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("truncated"), "stderr: {stderr}");
}

#[test]
fn env_seed_overrides_flag() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("report.json");
    let output = dfir()
        .args([
            "verify",
            "--block",
            "dfpn",
            "--seeds",
            "1,2,3",
            "--out",
            out.to_str().unwrap(),
        ])
        .env("DFIR_SEED", "777")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(json["config"]["seeds"], serde_json::json!([777]));
}

#[test]
fn bench_reports_requested_row_counts() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    fs::write(
        &cfg,
        r#"{
            "bench": {
                "attn_n": [32, 64],
                "attn_d": 8,
                "attn_k_divisors": [16],
                "conv_extents": [8],
                "conv_kernels": [3],
                "conv_channels": 2,
                "runs": 2
            }
        }"#,
    )
    .unwrap();
    let out = dir.path().join("bench_report.json");
    let output = dfir()
        .args([
            "bench",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let rows = json["benchmarks"].as_array().unwrap();
    // Two Ns x (dense + one sparse) + one conv pair.
    assert_eq!(rows.len(), 6);
}

#[test]
fn invalid_grid_in_config_exits_two() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("grid.json");
    fs::write(&cfg, r#"{"grid": {"channels": [7]}}"#).unwrap();
    let output = dfir()
        .args(["verify", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("even"), "stderr: {stderr}");
}
