use std::path::{Path, PathBuf};
use std::process::Command;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lyapcert"))
        .args(args)
        .output()
        .expect("spawn lyapcert")
}

fn command_of(config: &Path) -> String {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(config).unwrap()).unwrap();
    v["analyses"][0]["command"].as_str().unwrap().to_string()
}

#[test]
fn reports_match_golden_files() {
    let dir = configs();
    let tmp = tempfile::tempdir().unwrap();
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let name = path.file_name().unwrap();
        let cmd = command_of(&path);
        for round in 0..2 {
            let out = tmp.path().join(format!("{round}.json"));
            let o = run(&[
                &cmd,
                "--config",
                path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--no-timestamp",
            ]);
            assert_eq!(
                o.status.code(),
                Some(0),
                "{}: {}",
                path.display(),
                String::from_utf8_lossy(&o.stderr)
            );
            let got = std::fs::read_to_string(&out).unwrap();
            let golden = std::fs::read_to_string(dir.join("golden").join(name)).unwrap();
            assert_eq!(got, golden, "{} differs from golden report", path.display());
        }
        seen += 1;
    }
    assert!(seen >= 7);
}

#[test]
fn stdout_report_has_timestamp_by_default() {
    let cfg = configs().join("scalar_stable.json");
    let o = run(&["linear", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "passed");
    assert!(v["timestamp"].is_u64());
}

#[test]
fn failed_check_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("marginal.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "autonomous", "dims": {"x": 1}, "map": {"x": ["x[0] - x[0]^3"]},
            "analyses": [{"command": "certify-local"}]}"#,
    )
    .unwrap();
    let o = run(&["certify-local", "--config", cfg.to_str().unwrap(), "--no-timestamp"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(2), "{v}");
    assert_eq!(v["status"], "failed");
}

#[test]
fn malformed_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"kind": "autonomous", "dims": {"x": 1}, "map": {"x": ["x[0] +"]}}"#).unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--no-timestamp"]);
    assert_eq!(o.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["status"], "error");
    assert!(v["error"].as_str().unwrap().contains("/map/x/0"), "{v}");
}

#[test]
fn missing_config_exits_one() {
    let o = run(&["simulate", "--config", "/nonexistent/lyapcert.json"]);
    assert_eq!(o.status.code(), Some(1));
}
