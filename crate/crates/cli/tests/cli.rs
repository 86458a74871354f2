use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &str = r#"
[data]
kind = "hundred_feature"
link = "linear"
rows = 400

[session]
horizon = 24
grid = { step = 10.0, max = 30.0 }
buyers = [{ agent = 0, value_function = { kind = "constant", value = 30.0 } }]
sellers = [{ agent = 12, prices = [10.0] }, { agent = 21, prices = [10.0] }, { agent = 55, prices = [10.0] }]
"#;

fn run(args: &[&str], out: &Path, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_budget-market"));
    cmd.args(args).arg("--out").arg(out).env_remove("BUDGET_MARKET_JOBS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn unknown_preset_is_a_usage_error_without_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = run(&["run-session", "--preset", "case9"], &out, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_config_and_preset_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run(&["synth"], &out, &[]).status.code(), Some(2));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(run(&["synth", "--config", missing.to_str().unwrap()], &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn invalid_configuration_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &SMALL.replace("horizon = 24", "horizon = 0"));
    let o = run(&["run-session", "--config", &cfg], &out, &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    let cfg = write_config(tmp.path(), &format!("{SMALL}\nbogus = 1\n"));
    assert_eq!(run(&["run-session", "--config", &cfg], &out, &[]).status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn bad_jobs_variable_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&["synth", "--config", &cfg], &out, &[("BUDGET_MARKET_JOBS", "many")]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["synth", "--config", &cfg, "--jobs", "0"], &out, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&["run-session", "--config", &cfg, "--seed", "5"], &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["command"], "run-session");
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert_eq!(artifacts.len(), 6);
    for a in artifacts {
        let bytes = std::fs::read(out.join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("buyer,launch,stationary,payment"));
}

#[test]
fn empty_seller_set_delivers_the_local_forecast() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let text = SMALL.replace(
        "sellers = [{ agent = 12, prices = [10.0] }, { agent = 21, prices = [10.0] }, { agent = 55, prices = [10.0] }]",
        "sellers = []",
    );
    let cfg = write_config(tmp.path(), &text);
    let o = run(&["run-session", "--config", &cfg], &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reports: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("reports.json")).unwrap()).unwrap();
    assert_eq!(reports[0]["payment"], 0);
    assert!(reports[0]["forecasts"].as_array().unwrap().iter().all(|f| f["from_market"] == false));
}

#[test]
fn benchmark_from_forecast_files() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("local.csv"), "zone,timestamp,horizon,forecast\n1,2020-01-01 00:00:00,1,0.5\n1,2020-01-01 01:00:00,1,0.1\n").unwrap();
    std::fs::write(d.join("market.csv"), "zone,timestamp,horizon,forecast\n1,2020-01-01 00:00:00,1,0.4\n1,2020-01-01 01:00:00,1,0.2\n").unwrap();
    std::fs::write(d.join("obs.csv"), "zone,timestamp,actual\n1,2020-01-01 00:00:00,0.4\n1,2020-01-01 01:00:00,0.2\n").unwrap();
    let base = "[data]\nkind = \"zones\"\n\n[benchmark]\nlocal = \"local.csv\"\nmarket = \"market.csv\"\n";
    let cfg = write_config(d, &format!("{base}observations = \"obs.csv\"\n"));
    let out = d.join("out");
    let o = run(&["benchmark", "--config", &cfg], &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    // local errors 0.1 and 0.1, market errors 0 and 0
    let all: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&all[..3], ["1", "all", "2"]);
    assert!((all[3].parse::<f64>().unwrap() - 0.1).abs() < 1e-12, "{table}");
    assert_eq!(&all[4..], ["0.0", "100.0"]);

    let cfg = write_config(d, base);
    let o = run(&["benchmark", "--config", &cfg], &d.join("out2"), &[]);
    assert_eq!(o.status.code(), Some(2));
}
