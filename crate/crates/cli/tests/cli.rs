//! End-to-end tests of the command-line interface: exit codes, output
//! determinism and manifest completeness.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pwscatter"))
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn tmp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("pwscatter-test-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn fnv1a64(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("fnv1a64:{h:016x}")
}

#[test]
fn empty_zeta_grid_is_validation_error_without_files() {
    let out = tmp_dir("empty-grid");
    let status = bin()
        .args(["melnikov", "--zeta", "0:1:0", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    assert!(
        !out.join("melnikov.csv").exists(),
        "no files on validation failure"
    );
}

#[test]
fn unknown_model_is_validation_error() {
    let out = tmp_dir("unknown-model");
    let status = bin()
        .args(["melnikov", "--model", "pendulum", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn bad_flag_is_validation_error() {
    let status = bin().args(["melnikov", "--no-such-flag"]).output().unwrap();
    assert_eq!(status.status.code(), Some(1));
}

#[test]
fn unreachable_zero_ordinal_is_computational_failure() {
    let out = tmp_dir("bad-ordinal");
    let status = bin()
        .args([
            "hetero",
            "--zero-index",
            "99",
            "--profile-points",
            "60",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn melnikov_outputs_and_manifest() {
    let out = tmp_dir("melnikov");
    let status = bin()
        .args([
            "melnikov",
            "--model",
            "rocking-block",
            "--v",
            "0.48",
            "--theta",
            "0",
            "--s",
            "0",
            "--zeta",
            "0:8:100",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");

    let csv = read(&out, "melnikov.csv");
    assert!(csv.starts_with("zeta,M\n"));
    assert_eq!(csv.lines().count(), 101);
    let zeros = read(&out, "zeros.json");
    assert!(zeros.contains("\"zeta_bar\""));

    // every output file is listed with its content hash
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 2);
    for entry in outputs {
        let name = entry["path"].as_str().unwrap();
        let body = read(&out, name);
        assert_eq!(entry["bytes"].as_u64().unwrap() as usize, body.len());
        assert_eq!(entry["hash"].as_str().unwrap(), fnv1a64(body.as_bytes()));
    }
    assert_eq!(manifest["config"]["params"]["omega"].as_f64().unwrap(), 3.0);
    assert!(manifest["config"]["deterministic"].as_bool().unwrap());
}

#[test]
fn identical_config_gives_byte_identical_outputs() {
    let out1 = tmp_dir("det-1");
    let out2 = tmp_dir("det-2");
    for (out, workers) in [(&out1, "1"), (&out2, "6")] {
        let status = bin()
            .args([
                "melnikov",
                "--zeta",
                "0:6:150",
                "--workers",
                workers,
                "--out",
            ])
            .arg(out)
            .output()
            .unwrap();
        assert!(status.status.success());
    }
    assert_eq!(read(&out1, "melnikov.csv"), read(&out2, "melnikov.csv"));
    assert_eq!(read(&out1, "zeros.json"), read(&out2, "zeros.json"));
}

#[test]
fn impact_sequence_csv() {
    let out = tmp_dir("impact");
    let status = bin()
        .args([
            "impact",
            "--v",
            "0.48",
            "--x",
            "1",
            "--y",
            "0",
            "--n-forward",
            "4",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let csv = read(&out, "impact.csv");
    assert!(csv.starts_with("i,t,v,x,y,s,manifold_reason\n"));
    assert_eq!(csv.lines().count(), 6); // header + seed + 4 impacts
    let last = csv.lines().last().unwrap();
    assert!(last.ends_with("max-count"));
}

#[test]
fn config_file_with_flag_overrides() {
    let out = tmp_dir("config-file");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("model.cfg");
    std::fs::write(&cfg, "# model\ndelta = 0.5\nk = 2.0\nomega = 4.0\neps = 0.02\n").unwrap();
    let status = bin()
        .args(["melnikov", "--zeta", "0:3:40", "--config"])
        .arg(&cfg)
        .args(["--eps", "0.03", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out, "manifest.json")).unwrap();
    let params = &manifest["config"]["params"];
    assert_eq!(params["delta"].as_f64().unwrap(), 0.5);
    assert_eq!(params["k"].as_f64().unwrap(), 2.0);
    assert_eq!(params["omega"].as_f64().unwrap(), 4.0);
    // command-line flag overrides the file
    assert_eq!(params["eps"].as_f64().unwrap(), 0.03);
}

#[test]
fn distance_csv_columns() {
    let out = tmp_dir("distance");
    let status = bin()
        .args(["distance", "--zeta", "0:1:4", "--eps", "0.01", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success());
    let csv = read(&out, "distance.csv");
    assert!(csv.starts_with("zeta,y_unstable,y_stable,delta,delta_over_eps,melnikov\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn hetero_connections_json() {
    let out = tmp_dir("hetero");
    let status = bin()
        .args([
            "hetero",
            "--zero-index",
            "1",
            "--profile-points",
            "120",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{status:?}");
    let body = read(&out, "connections.json");
    let parsed: serde_json::Value = serde_json::from_str(&body).unwrap();
    let arr = parsed.as_array().unwrap();
    assert_eq!(arr.len(), 1);
    assert!(arr[0]["zeta_star"].is_number());
    assert!(arr[0]["z_star"].as_array().unwrap().len() == 5);
    let y_u = arr[0]["y_unstable"].as_f64().unwrap();
    let y_s = arr[0]["y_stable"].as_f64().unwrap();
    assert!((y_u - y_s).abs() <= 1e-10);
}
