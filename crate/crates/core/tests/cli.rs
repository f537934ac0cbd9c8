use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fastswarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastswarm"))
        .args(args)
        .output()
        .expect("spawn fastswarm")
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.toml"))
}

fn short_scenario(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(scenario("goal_approach")).unwrap();
    let mut value: toml::Table = text.parse().unwrap();
    value.insert("duration".into(), toml::Value::Float(4.0));
    let path = dir.join("short.toml");
    std::fs::write(&path, toml::to_string(&value).unwrap()).unwrap();
    path
}

#[test]
fn bundled_scenarios_validate() {
    for name in ["goal_approach", "agile"] {
        let out = fastswarm(&["validate", scenario(name).to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "dt = -1.0\n").unwrap();
    let out = fastswarm(&["validate", path.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn run_log_recomputes_to_the_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_scenario(dir.path());
    let out_dir = dir.path().join("out");
    let out = fastswarm(&[
        "run",
        config.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = out_dir.join("run.jsonl");
    assert!(log.exists());
    let out = fastswarm(&["metrics", log.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["collisions"], 0);
    assert!(summary["cvr_mean"].as_f64().unwrap() >= 0.0);
}

#[test]
fn fit_model_prints_a_config_section() {
    let out = fastswarm(&["fit-model", scenario("goal_approach").to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[response_model]"));
    assert!(text.contains("q1 = "));
}
